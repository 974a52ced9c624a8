#include "stratpred/embedding_table.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "stratpred/error.hpp"
#include "stratpred/text.hpp"

namespace stratpred {

std::string_view node_type_name(NodeType t) {
  switch (t) {
    case NodeType::Student: return "student";
    case NodeType::Problem: return "problem";
    case NodeType::Kc: return "kc";
  }
  return "?";
}

NodeType parse_node_type(std::string_view s) {
  if (s == "student") return NodeType::Student;
  if (s == "problem") return NodeType::Problem;
  if (s == "kc") return NodeType::Kc;
  throw DataError("unknown node type '" + std::string(s) + "'");
}

void EmbeddingTable::set(NodeType type, const std::string& id, std::vector<double> v) {
  if (v.size() != dim_) {
    throw DataError("embedding for " + std::string(node_type_name(type)) + " '" + id + "' has " +
                    std::to_string(v.size()) + " components, expected " + std::to_string(dim_));
  }
  for (double x : v) {
    if (!std::isfinite(x)) throw DataError("non-finite embedding for '" + id + "'");
  }
  nodes_[static_cast<int>(type)][id] = std::move(v);
}

bool EmbeddingTable::contains(NodeType type, const std::string& id) const {
  return nodes_[static_cast<int>(type)].count(id) != 0;
}

std::span<const double> EmbeddingTable::get(NodeType type, const std::string& id) const {
  const auto& m = nodes_[static_cast<int>(type)];
  const auto it = m.find(id);
  if (it == m.end()) {
    throw LookupError("no embedding for " + std::string(node_type_name(type)) + " '" + id + "'");
  }
  return it->second;
}

std::size_t EmbeddingTable::size() const {
  return nodes_[0].size() + nodes_[1].size() + nodes_[2].size();
}

void EmbeddingTable::write_tsv(std::ostream& out) const {
  for (int t = 0; t < 3; ++t) {
    for (const auto& [id, v] : nodes_[t]) {
      out << node_type_name(static_cast<NodeType>(t)) << '\t' << id;
      for (double x : v) out << '\t' << text::format_double(x);
      out << '\n';
    }
  }
}

EmbeddingTable EmbeddingTable::read_tsv(std::istream& in) {
  EmbeddingTable table;
  bool first = true;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(line, "\t");
    if (cells.size() < 3) throw DataError("embedding line " + std::to_string(line_no) + " is too short");
    if (first) {
      table.dim_ = cells.size() - 2;
      first = false;
    }
    std::vector<double> v;
    v.reserve(cells.size() - 2);
    try {
      for (std::size_t i = 2; i < cells.size(); ++i) v.push_back(text::parse_double(cells[i], "embedding"));
    } catch (const ConfigError& e) {
      throw DataError("embedding line " + std::to_string(line_no) + ": " + e.what());
    }
    table.set(parse_node_type(cells[0]), cells[1], std::move(v));
  }
  return table;
}

}  // namespace stratpred
