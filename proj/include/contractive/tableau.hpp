#pragma once

#include "contractive/errors.hpp"
#include "contractive/linalg.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace contractive {

using Rational = boost::multiprecision::cpp_rational;

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

/// "p/q" or "-p/q"; integers print without a denominator.
inline std::string to_string(const Rational& r) {
  std::ostringstream os;
  os << numerator(r);
  if (denominator(r) != 1) os << "/" << denominator(r);
  return os.str();
}

/// Parse an integer, "p/q" or a plain decimal ("0.25") exactly. Returns nullopt
/// for anything else (exponent notation, inf, nan).
inline std::optional<Rational> parse_rational(const std::string& token) {
  if (token.empty()) return std::nullopt;
  auto is_int = [](const std::string& s) {
    std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
    if (i >= s.size()) return false;
    return std::all_of(s.begin() + static_cast<std::ptrdiff_t>(i), s.end(),
                       [](unsigned char ch) { return std::isdigit(ch) != 0; });
  };
  // cpp_int reads a leading 0 as an octal prefix, so strip leading zeros.
  auto to_int = [](std::string s) {
    bool negative = false;
    if (s[0] == '+' || s[0] == '-') {
      negative = s[0] == '-';
      s = s.substr(1);
    }
    const auto nz = s.find_first_not_of('0');
    boost::multiprecision::cpp_int v(nz == std::string::npos ? std::string("0") : s.substr(nz));
    return negative ? boost::multiprecision::cpp_int(-v) : v;
  };
  const auto slash = token.find('/');
  if (slash != std::string::npos) {
    const std::string num = token.substr(0, slash), den = token.substr(slash + 1);
    if (!is_int(num) || !is_int(den) || den[0] == '-' || den[0] == '+') return std::nullopt;
    const boost::multiprecision::cpp_int d = to_int(den);
    if (d == 0) return std::nullopt;
    return Rational(to_int(num), d);
  }
  const auto dot = token.find('.');
  if (dot == std::string::npos) {
    if (!is_int(token)) return std::nullopt;
    return Rational(to_int(token));
  }
  std::string whole = token.substr(0, dot), frac = token.substr(dot + 1);
  bool negative = false;
  if (!whole.empty() && (whole[0] == '-' || whole[0] == '+')) {
    negative = whole[0] == '-';
    whole = whole.substr(1);
  }
  if (whole.empty() && frac.empty()) return std::nullopt;
  const std::string digits = whole + frac;
  if (!std::all_of(digits.begin(), digits.end(), [](unsigned char ch) { return std::isdigit(ch) != 0; }))
    return std::nullopt;
  const boost::multiprecision::cpp_int num = to_int(digits);
  boost::multiprecision::cpp_int den = boost::multiprecision::pow(boost::multiprecision::cpp_int(10),
                                                                  static_cast<unsigned>(frac.size()));
  Rational r(num, den);
  return negative ? Rational(-r) : r;
}

/// Tableau entries kept as exact rationals alongside the double values.
struct ExactCoefficients {
  std::vector<std::vector<Rational>> a;
  std::vector<Rational> b;
};

/// Runge-Kutta coefficients (a, b, c) with c the row sums of a.
class ButcherTableau {
 public:
  static constexpr double kConsistencyTol = 1e-14;

  ButcherTableau(std::string name, Matrix a, Vector b) : name_(std::move(name)), a_(std::move(a)), b_(std::move(b)) {
    validate();
  }

  ButcherTableau(std::string name, std::vector<std::vector<Rational>> a, std::vector<Rational> b)
      : name_(std::move(name)) {
    const auto s = static_cast<Eigen::Index>(b.size());
    if (s < 1 || static_cast<Eigen::Index>(a.size()) != s)
      throw PreconditionError("tableau '" + name_ + "': a must be s x s with s = len(b) >= 1");
    a_.resize(s, s);
    b_.resize(s);
    Rational sum_b = 0;
    for (Eigen::Index i = 0; i < s; ++i) {
      if (static_cast<Eigen::Index>(a[i].size()) != s)
        throw PreconditionError("tableau '" + name_ + "': a must be square");
      for (Eigen::Index j = 0; j < s; ++j) a_(i, j) = to_double(a[i][j]);
      b_[i] = to_double(b[i]);
      sum_b += b[i];
    }
    if (sum_b != 1) throw PreconditionError("tableau '" + name_ + "': weights sum to " + to_string(sum_b) + ", not 1");
    exact_ = ExactCoefficients{std::move(a), std::move(b)};
    validate();
  }

  const std::string& name() const { return name_; }
  int stages() const { return static_cast<int>(b_.size()); }
  const Matrix& a() const { return a_; }
  const Vector& b() const { return b_; }
  const Vector& c() const { return c_; }
  const std::optional<ExactCoefficients>& exact() const { return exact_; }

  bool is_explicit() const {
    for (Eigen::Index i = 0; i < a_.rows(); ++i)
      for (Eigen::Index j = i; j < a_.cols(); ++j)
        if (a_(i, j) != 0.0) return false;
    return true;
  }

  bool positive_weights() const { return (b_.array() > 0.0).all(); }

  /// Compare user-supplied abscissae with the row sums.
  void check_abscissae(const Vector& c, double tol = 1e-14) const {
    if (c.size() != c_.size() || ((c - c_).array().abs() > tol).any())
      throw PreconditionError("tableau '" + name_ + "': c does not match the row sums of a");
  }

 private:
  void validate() {
    if (b_.size() < 1 || a_.rows() != b_.size() || a_.cols() != b_.size())
      throw PreconditionError("tableau '" + name_ + "': a must be s x s with s = len(b) >= 1");
    if (!a_.allFinite() || !b_.allFinite()) throw PreconditionError("tableau '" + name_ + "': non-finite entry");
    if (std::abs(b_.sum() - 1.0) > kConsistencyTol)
      throw PreconditionError("tableau '" + name_ + "': weights do not sum to 1");
    c_ = a_.rowwise().sum();
  }

  std::string name_;
  Matrix a_;
  Vector b_;
  Vector c_;
  std::optional<ExactCoefficients> exact_;
};

/// max over i, j of |b_i b_j - b_i a_ij - b_j a_ji|.
inline double symplecticity_defect(const ButcherTableau& t) {
  const Matrix& a = t.a();
  const Vector& b = t.b();
  double worst = 0.0;
  for (int i = 0; i < t.stages(); ++i)
    for (int j = 0; j < t.stages(); ++j)
      worst = std::max(worst, std::abs(b[i] * b[j] - b[i] * a(i, j) - b[j] * a(j, i)));
  return worst;
}

inline bool is_symplectic(const ButcherTableau& t, double tol = 1e-14) {
  return symplecticity_defect(t) <= tol;
}

namespace tableaus {

inline ButcherTableau euler() { return ButcherTableau("euler", {{Rational(0)}}, {Rational(1)}); }

inline ButcherTableau midpoint(std::string name = "midpoint") {
  return ButcherTableau(std::move(name), {{Rational(1, 2)}}, {Rational(1)});
}

inline ButcherTableau gauss2() {
  const double r = std::sqrt(3.0) / 6.0;
  Matrix a(2, 2);
  a << 0.25, 0.25 - r, 0.25 + r, 0.25;
  Vector b(2);
  b << 0.5, 0.5;
  return ButcherTableau("gauss2", a, b);
}

/// Kutta's third-order method.
inline ButcherTableau rk3() {
  using R = Rational;
  return ButcherTableau("rk3", {{R(0), R(0), R(0)}, {R(1, 2), R(0), R(0)}, {R(-1), R(2), R(0)}},
                        {R(1, 6), R(2, 3), R(1, 6)});
}

inline ButcherTableau rk4() {
  using R = Rational;
  return ButcherTableau("rk4",
                        {{R(0), R(0), R(0), R(0)},
                         {R(1, 2), R(0), R(0), R(0)},
                         {R(0), R(1, 2), R(0), R(0)},
                         {R(0), R(0), R(1), R(0)}},
                        {R(1, 6), R(1, 3), R(1, 3), R(1, 6)});
}

/// Explicit trapezoid.
inline ButcherTableau heun() {
  using R = Rational;
  return ButcherTableau("heun", {{R(0), R(0)}, {R(1), R(0)}}, {R(1, 2), R(1, 2)});
}

}  // namespace tableaus

inline std::vector<std::string> tableau_names() {
  return {"euler", "midpoint", "gauss1", "gauss2", "rk3", "rk4", "heun"};
}

inline ButcherTableau tableau_registry(const std::string& name) {
  if (name == "euler") return tableaus::euler();
  if (name == "midpoint") return tableaus::midpoint();
  if (name == "gauss1") return tableaus::midpoint("gauss1");
  if (name == "gauss2") return tableaus::gauss2();
  if (name == "rk3") return tableaus::rk3();
  if (name == "rk4") return tableaus::rk4();
  if (name == "heun") return tableaus::heun();
  throw UnknownNameError("unknown tableau '" + name + "'");
}

/// Declared product h* L below which the 2D contraction property was verified
/// for fields with ||F||_2 < L. Empirical; absent for methods without the property.
inline std::optional<double> declared_step_bound(const std::string& name) {
  // midpoint: h* = 2 / sqrt(-det F) >= 2 / L
  if (name == "midpoint" || name == "gauss1") return 2.0;
  if (name == "gauss2") return 1.0;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Plain-text tableau schema:
//
//   # comment
//   name  my-method        (optional)
//   stages 2
//   a 1/4 0                (one line per row, s entries)
//   a 1/2 1/4
//   b 1/2 1/2
//   c 1/4 3/4              (optional, checked against row sums)
//
// Entries are integers, fractions p/q or decimals (all read exactly), or any
// other floating-point literal (which makes the tableau inexact).

inline ButcherTableau parse_tableau(std::istream& in, const std::string& default_name = "custom") {
  std::string name = default_name;
  std::optional<int> stages;
  std::vector<std::vector<std::string>> rows_a;
  std::vector<std::string> row_b, row_c;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    std::vector<std::string> tokens;
    for (std::string t; ls >> t;) tokens.push_back(t);
    auto fail = [&](const std::string& msg) {
      return ParseError("tableau line " + std::to_string(line_no) + ": " + msg);
    };
    if (key == "name") {
      if (tokens.size() != 1) throw fail("name takes one token");
      name = tokens[0];
    } else if (key == "stages") {
      if (tokens.size() != 1) throw fail("stages takes one integer");
      try {
        stages = std::stoi(tokens[0]);
      } catch (const std::exception&) {
        throw fail("bad stage count '" + tokens[0] + "'");
      }
      if (*stages < 1) throw fail("stage count must be positive");
    } else if (key == "a") {
      rows_a.push_back(tokens);
    } else if (key == "b") {
      row_b = tokens;
    } else if (key == "c") {
      row_c = tokens;
    } else {
      throw fail("unknown key '" + key + "'");
    }
  }
  if (!stages) throw ParseError("tableau: missing 'stages'");
  const auto s = static_cast<std::size_t>(*stages);
  if (rows_a.size() != s) throw ParseError("tableau: expected " + std::to_string(s) + " 'a' rows");
  for (const auto& r : rows_a)
    if (r.size() != s) throw ParseError("tableau: each 'a' row needs " + std::to_string(s) + " entries");
  if (row_b.size() != s) throw ParseError("tableau: 'b' needs " + std::to_string(s) + " entries");
  if (!row_c.empty() && row_c.size() != s) throw ParseError("tableau: 'c' needs " + std::to_string(s) + " entries");

  auto to_num = [](const std::string& t) {
    try {
      std::size_t used = 0;
      const double v = std::stod(t, &used);
      if (used != t.size()) throw ParseError("tableau: bad number '" + t + "'");
      return v;
    } catch (const std::invalid_argument&) {
      throw ParseError("tableau: bad number '" + t + "'");
    } catch (const std::out_of_range&) {
      throw ParseError("tableau: number out of range '" + t + "'");
    }
  };

  bool all_exact = true;
  std::vector<std::vector<Rational>> ea(s, std::vector<Rational>(s));
  std::vector<Rational> eb(s);
  Matrix a(s, s);
  Vector b(s);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      if (auto r = parse_rational(rows_a[i][j])) {
        ea[i][j] = *r;
        a(i, j) = to_double(*r);
      } else {
        all_exact = false;
        a(i, j) = to_num(rows_a[i][j]);
      }
    }
    if (auto r = parse_rational(row_b[i])) {
      eb[i] = *r;
      b[i] = to_double(*r);
    } else {
      all_exact = false;
      b[i] = to_num(row_b[i]);
    }
  }
  ButcherTableau tab = all_exact ? ButcherTableau(name, ea, eb) : ButcherTableau(name, a, b);
  if (!row_c.empty()) {
    Vector c(s);
    for (std::size_t i = 0; i < s; ++i) {
      auto r = parse_rational(row_c[i]);
      c[i] = r ? to_double(*r) : to_num(row_c[i]);
    }
    tab.check_abscissae(c, 1e-12);
  }
  return tab;
}

inline ButcherTableau parse_tableau(const std::string& text, const std::string& default_name = "custom") {
  std::istringstream in(text);
  return parse_tableau(in, default_name);
}

}  // namespace contractive
