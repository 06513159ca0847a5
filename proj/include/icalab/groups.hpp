#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icalab/rng.hpp"

namespace icalab::groups {

enum class Kind {
  cyclic,
  dihedral,
  direct_product,
  quaternion,
  semigroup,
  quasigroup,
  magma,
  custom,
};

const char* kind_name(Kind k);
Kind kind_from_name(const std::string& s);

// An element of a finite structure, identified by its row/column index
// in the owning table.
struct Element {
  int index = 0;
  friend bool operator==(Element a, Element b) { return a.index == b.index; }
};

struct StructureReport {
  bool closed = false;
  bool associative = false;
  std::optional<int> identity;
  bool all_inverses = false;
  bool is_latin = false;
  bool is_abelian = false;

  bool is_group() const {
    return closed && associative && identity.has_value() && all_inverses;
  }
};

// A finite set with a binary operation, stored as an explicit
// order x order table of element indices. Immutable after construction,
// so instances are safe to share across threads.
class MagmaTable {
 public:
  MagmaTable(int order, std::vector<int> table, Kind kind, std::string name);

  int order() const { return order_; }
  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }

  int product(int a, int b) const { return table_[static_cast<size_t>(a) * order_ + b]; }
  Element product(Element a, Element b) const { return {product(a.index, b.index)}; }

  const std::vector<int>& raw() const { return table_; }

  // Text format: "order kind name" on the first line, then `order` lines
  // of space-separated indices.
  std::string to_text() const;
  static MagmaTable from_text(const std::string& text);

 private:
  int order_;
  std::vector<int> table_;
  Kind kind_;
  std::string name_;
};

MagmaTable build_cyclic(int n);
MagmaTable build_dihedral(int n);
MagmaTable build_direct_product(const MagmaTable& a, const MagmaTable& b);
MagmaTable build_quaternion();

// Latin-square sampler: Jacobson-Matthews random walk over (possibly
// improper) Latin squares, burn-in of 10 * order^3 moves.
MagmaTable build_random_quasigroup(int order, Rng& rng);

// Associative table: the multiplicative monoid (Z_order, *) relabeled by
// a random permutation. Conjugation preserves associativity, so the
// postcondition is exact rather than sampled.
MagmaTable build_random_semigroup(int order, Rng& rng);

MagmaTable build_random_magma(int order, Rng& rng);

// Exhaustive structural scan: O(order^3) associativity triple loop,
// row/column scans for identity, inverses, Latin property, commutativity.
StructureReport verify_axioms(const MagmaTable& t);

}  // namespace icalab::groups
