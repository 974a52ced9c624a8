#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stratpred {

enum class NodeType { Student = 0, Problem = 1, Kc = 2 };

std::string_view node_type_name(NodeType t);
/// Parses "student" / "problem" / "kc"; throws DataError otherwise.
NodeType parse_node_type(std::string_view s);

/// d-dimensional vectors for student, problem and KC nodes.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }

  /// Throws DataError on a dimension mismatch or non-finite entry.
  void set(NodeType type, const std::string& id, std::vector<double> v);
  bool contains(NodeType type, const std::string& id) const;
  /// Throws LookupError naming the node.
  std::span<const double> get(NodeType type, const std::string& id) const;

  const std::map<std::string, std::vector<double>>& nodes(NodeType type) const {
    return nodes_[static_cast<int>(type)];
  }
  std::size_t size() const;

  /// TSV rows `node_type\tnode_id\tv0 ... v{d-1}` (students, problems, KCs).
  void write_tsv(std::ostream& out) const;
  static EmbeddingTable read_tsv(std::istream& in);

 private:
  std::size_t dim_;
  std::array<std::map<std::string, std::vector<double>>, 3> nodes_;
};

}  // namespace stratpred
