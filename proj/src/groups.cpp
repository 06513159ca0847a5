#include "icalab/groups.hpp"

#include <array>
#include <cstdint>
#include <sstream>

#include "icalab/errors.hpp"

namespace icalab::groups {

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::cyclic: return "cyclic";
    case Kind::dihedral: return "dihedral";
    case Kind::direct_product: return "direct_product";
    case Kind::quaternion: return "quaternion";
    case Kind::semigroup: return "semigroup";
    case Kind::quasigroup: return "quasigroup";
    case Kind::magma: return "magma";
    case Kind::custom: return "custom";
  }
  return "custom";
}

Kind kind_from_name(const std::string& s) {
  for (Kind k : {Kind::cyclic, Kind::dihedral, Kind::direct_product, Kind::quaternion,
                 Kind::semigroup, Kind::quasigroup, Kind::magma, Kind::custom}) {
    if (s == kind_name(k)) return k;
  }
  throw DataError("unknown structure kind: " + s);
}

MagmaTable::MagmaTable(int order, std::vector<int> table, Kind kind, std::string name)
    : order_(order), table_(std::move(table)), kind_(kind), name_(std::move(name)) {
  if (order_ < 1) throw ConfigError("table order must be positive");
  if (table_.size() != static_cast<size_t>(order_) * order_)
    throw DataError("table size does not match order " + std::to_string(order_));
  for (int v : table_)
    if (v < 0 || v >= order_) throw DataError("table entry out of range: not closed");
}

std::string MagmaTable::to_text() const {
  std::ostringstream os;
  os << order_ << ' ' << kind_name(kind_) << ' ' << name_ << '\n';
  for (int i = 0; i < order_; ++i) {
    for (int j = 0; j < order_; ++j) {
      if (j) os << ' ';
      os << product(i, j);
    }
    os << '\n';
  }
  return os.str();
}

MagmaTable MagmaTable::from_text(const std::string& text) {
  std::istringstream is(text);
  int order = 0;
  std::string kind_str, name;
  if (!(is >> order >> kind_str)) throw DataError("malformed table header");
  std::getline(is, name);
  if (!name.empty() && name.front() == ' ') name.erase(0, 1);
  std::vector<int> table;
  table.reserve(static_cast<size_t>(order) * order);
  int v;
  while (is >> v) table.push_back(v);
  return MagmaTable(order, std::move(table), kind_from_name(kind_str), name);
}

MagmaTable build_cyclic(int n) {
  if (n < 1) throw ConfigError("cyclic group order must be >= 1");
  std::vector<int> t(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) t[static_cast<size_t>(i) * n + j] = (i + j) % n;
  return MagmaTable(n, std::move(t), Kind::cyclic, "C" + std::to_string(n));
}

MagmaTable build_dihedral(int n) {
  if (n < 3) throw ConfigError("dihedral group requires n >= 3");
  // index i <  n: rotation r^i
  // index i >= n: reflection s*r^(i-n), with r^n = e, s^2 = e, s*r*s = r^-1
  int o = 2 * n;
  std::vector<int> t(static_cast<size_t>(o) * o);
  auto at = [&](int a, int b) -> int& { return t[static_cast<size_t>(a) * o + b]; };
  for (int a = 0; a < o; ++a) {
    for (int b = 0; b < o; ++b) {
      bool ra = a < n, rb = b < n;
      int i = ra ? a : a - n, j = rb ? b : b - n;
      if (ra && rb) at(a, b) = (i + j) % n;                 // r^i r^j
      else if (ra && !rb) at(a, b) = n + (((j - i) % n + n) % n);  // r^i s r^j = s r^(j-i)
      else if (!ra && rb) at(a, b) = n + (i + j) % n;       // s r^i r^j
      else at(a, b) = ((j - i) % n + n) % n;                // s r^i s r^j = r^(j-i)
    }
  }
  return MagmaTable(o, std::move(t), Kind::dihedral, "D" + std::to_string(n));
}

MagmaTable build_direct_product(const MagmaTable& a, const MagmaTable& b) {
  if (!verify_axioms(a).is_group() || !verify_axioms(b).is_group())
    throw DataError("direct product requires group factors");
  int na = a.order(), nb = b.order(), o = na * nb;
  std::vector<int> t(static_cast<size_t>(o) * o);
  // element (x, y) maps to index x*nb + y
  for (int x1 = 0; x1 < na; ++x1)
    for (int y1 = 0; y1 < nb; ++y1)
      for (int x2 = 0; x2 < na; ++x2)
        for (int y2 = 0; y2 < nb; ++y2) {
          int p = x1 * nb + y1, q = x2 * nb + y2;
          t[static_cast<size_t>(p) * o + q] = a.product(x1, x2) * nb + b.product(y1, y2);
        }
  return MagmaTable(o, std::move(t), Kind::direct_product, a.name() + "x" + b.name());
}

MagmaTable build_quaternion() {
  // elements: 0=1, 1=-1, 2=i, 3=-i, 4=j, 5=-j, 6=k, 7=-k
  // axis table over {1,i,j,k}: result axis and sign
  static constexpr std::array<std::array<int, 4>, 4> axis = {{
      {0, 1, 2, 3},  // 1*{1,i,j,k}
      {1, 0, 3, 2},  // i*{1,i,j,k} -> i, -1, k, -j
      {2, 3, 0, 1},  // j*...      -> j, -k, -1, i
      {3, 2, 1, 0},  // k*...      -> k, j, -i, -1
  }};
  static constexpr std::array<std::array<int, 4>, 4> sign = {{
      {+1, +1, +1, +1},
      {+1, -1, +1, -1},
      {+1, -1, -1, +1},
      {+1, +1, -1, -1},
  }};
  std::vector<int> t(64);
  for (int p = 0; p < 8; ++p) {
    for (int q = 0; q < 8; ++q) {
      int a1 = p / 2, s1 = (p % 2) ? -1 : +1;
      int a2 = q / 2, s2 = (q % 2) ? -1 : +1;
      int ar = axis[a1][a2];
      int sr = sign[a1][a2] * s1 * s2;
      t[static_cast<size_t>(p) * 8 + q] = ar * 2 + (sr < 0 ? 1 : 0);
    }
  }
  return MagmaTable(8, std::move(t), Kind::quaternion, "Q8");
}

namespace {

// Jacobson-Matthews random walk on the 0/1 incidence cube of a Latin
// square, allowing a single -1 entry (improper state) between moves.
class LatinWalk {
 public:
  LatinWalk(int n, Rng& rng) : n_(n), rng_(rng), cube_(static_cast<size_t>(n) * n * n, 0) {
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) at(r, c, (r + c) % n) = 1;
  }

  void step() {
    int x, y, z;
    if (!improper_) {
      // random zero cell
      do {
        x = rng_.below(n_);
        y = rng_.below(n_);
        z = rng_.below(n_);
      } while (at(x, y, z) != 0);
    } else {
      x = ix_;
      y = iy_;
      z = iz_;
    }
    int z1 = pick_one_symbol(x, y);
    int x1 = pick_one_row(y, z);
    int y1 = pick_one_col(x, z);
    at(x, y, z) += 1;
    at(x, y1, z1) += 1;
    at(x1, y, z1) += 1;
    at(x1, y1, z) += 1;
    at(x, y, z1) -= 1;
    at(x, y1, z) -= 1;
    at(x1, y, z) -= 1;
    at(x1, y1, z1) -= 1;
    improper_ = at(x1, y1, z1) < 0;
    if (improper_) {
      ix_ = x1;
      iy_ = y1;
      iz_ = z1;
    }
  }

  bool proper() const { return !improper_; }

  std::vector<int> to_table() const {
    std::vector<int> t(static_cast<size_t>(n_) * n_, -1);
    for (int r = 0; r < n_; ++r)
      for (int c = 0; c < n_; ++c)
        for (int s = 0; s < n_; ++s)
          if (at(r, c, s) == 1) t[static_cast<size_t>(r) * n_ + c] = s;
    return t;
  }

 private:
  int& at(int r, int c, int s) { return cube_[(static_cast<size_t>(r) * n_ + c) * n_ + s]; }
  int at(int r, int c, int s) const { return cube_[(static_cast<size_t>(r) * n_ + c) * n_ + s]; }

  // In a proper state each line has a unique 1; in the improper state the
  // line through the -1 cell has two, and we pick one at random.
  int pick_one_symbol(int x, int y) {
    int found[2], cnt = 0;
    for (int s = 0; s < n_; ++s)
      if (at(x, y, s) == 1 && cnt < 2) found[cnt++] = s;
    return cnt == 1 ? found[0] : found[rng_.below(2)];
  }
  int pick_one_row(int y, int z) {
    int found[2], cnt = 0;
    for (int r = 0; r < n_; ++r)
      if (at(r, y, z) == 1 && cnt < 2) found[cnt++] = r;
    return cnt == 1 ? found[0] : found[rng_.below(2)];
  }
  int pick_one_col(int x, int z) {
    int found[2], cnt = 0;
    for (int c = 0; c < n_; ++c)
      if (at(x, c, z) == 1 && cnt < 2) found[cnt++] = c;
    return cnt == 1 ? found[0] : found[rng_.below(2)];
  }

  int n_;
  Rng& rng_;
  std::vector<int> cube_;
  bool improper_ = false;
  int ix_ = 0, iy_ = 0, iz_ = 0;
};

}  // namespace

MagmaTable build_random_quasigroup(int order, Rng& rng) {
  if (order < 1) throw ConfigError("quasigroup order must be >= 1");
  if (order == 1) return MagmaTable(1, {0}, Kind::quasigroup, "QG1");
  LatinWalk walk(order, rng);
  long burn = 10L * order * order * order;
  for (long i = 0; i < burn; ++i) walk.step();
  while (!walk.proper()) walk.step();
  return MagmaTable(order, walk.to_table(), Kind::quasigroup, "QG" + std::to_string(order));
}

MagmaTable build_random_semigroup(int order, Rng& rng) {
  if (order < 1) throw ConfigError("semigroup order must be >= 1");
  // (Z_n, *) relabeled by a random permutation
  std::vector<int> perm(order);
  for (int i = 0; i < order; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<int> inv(order);
  for (int i = 0; i < order; ++i) inv[perm[i]] = i;
  std::vector<int> t(static_cast<size_t>(order) * order);
  for (int i = 0; i < order; ++i)
    for (int j = 0; j < order; ++j)
      t[static_cast<size_t>(i) * order + j] = perm[(inv[i] * inv[j]) % order];
  return MagmaTable(order, std::move(t), Kind::semigroup, "SG" + std::to_string(order));
}

MagmaTable build_random_magma(int order, Rng& rng) {
  if (order < 1) throw ConfigError("magma order must be >= 1");
  std::vector<int> t(static_cast<size_t>(order) * order);
  for (int& v : t) v = rng.below(order);
  return MagmaTable(order, std::move(t), Kind::magma, "M" + std::to_string(order));
}

StructureReport verify_axioms(const MagmaTable& t) {
  int n = t.order();
  StructureReport rep;
  rep.closed = true;  // enforced by the constructor

  rep.associative = true;
  for (int a = 0; a < n && rep.associative; ++a)
    for (int b = 0; b < n && rep.associative; ++b)
      for (int c = 0; c < n; ++c)
        if (t.product(t.product(a, b), c) != t.product(a, t.product(b, c))) {
          rep.associative = false;
          break;
        }

  for (int e = 0; e < n; ++e) {
    bool ok = true;
    for (int g = 0; g < n; ++g)
      if (t.product(e, g) != g || t.product(g, e) != g) {
        ok = false;
        break;
      }
    if (ok) {
      rep.identity = e;
      break;
    }
  }

  if (rep.identity) {
    int e = *rep.identity;
    rep.all_inverses = true;
    for (int g = 0; g < n; ++g) {
      bool found = false;
      for (int h = 0; h < n; ++h)
        if (t.product(g, h) == e && t.product(h, g) == e) {
          found = true;
          break;
        }
      if (!found) {
        rep.all_inverses = false;
        break;
      }
    }
  }

  rep.is_latin = true;
  for (int i = 0; i < n && rep.is_latin; ++i) {
    std::vector<bool> row(n, false), col(n, false);
    for (int j = 0; j < n; ++j) {
      row[t.product(i, j)] = true;
      col[t.product(j, i)] = true;
    }
    for (int j = 0; j < n; ++j)
      if (!row[j] || !col[j]) {
        rep.is_latin = false;
        break;
      }
  }

  rep.is_abelian = true;
  for (int a = 0; a < n && rep.is_abelian; ++a)
    for (int b = a + 1; b < n; ++b)
      if (t.product(a, b) != t.product(b, a)) {
        rep.is_abelian = false;
        break;
      }

  return rep;
}

}  // namespace icalab::groups
