#include "dflow/cif.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>

#include "dflow/elements.hpp"
#include "dflow/error.hpp"
#include "dflow/geometry.hpp"

namespace dflow::cif {
namespace {

struct Token {
  std::string text;
  bool quoted = false;
};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] == ';') {
      // Semicolon-delimited text field spanning lines.
      std::string field = line.substr(1);
      bool closed = false;
      while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line[0] == ';') {
          closed = true;
          break;
        }
        field += "\n" + line;
      }
      if (!closed) throw DataError("cif: unterminated text field before line " + std::to_string(line_no));
      tokens.push_back({field, true});
      continue;
    }
    std::size_t i = 0;
    while (i < line.size()) {
      if (is_space(line[i])) {
        ++i;
        continue;
      }
      if (line[i] == '#') break;
      if (line[i] == '\'' || line[i] == '"') {
        const char q = line[i];
        std::size_t j = i + 1;
        // A quote closes only when followed by whitespace or end of line.
        while (j < line.size() && !(line[j] == q && (j + 1 == line.size() || is_space(line[j + 1])))) ++j;
        if (j >= line.size()) throw DataError("cif: unterminated quote on line " + std::to_string(line_no));
        tokens.push_back({line.substr(i + 1, j - i - 1), true});
        i = j + 1;
        continue;
      }
      std::size_t j = i;
      while (j < line.size() && !is_space(line[j])) ++j;
      tokens.push_back({line.substr(i, j - i), false});
      i = j;
    }
  }
  return tokens;
}

bool is_tag(const Token& t) { return !t.quoted && !t.text.empty() && t.text[0] == '_'; }
bool is_keyword(const Token& t, std::string_view prefix) {
  return !t.quoted && lower(t.text).rfind(prefix, 0) == 0;
}

struct SymOp {
  Eigen::Matrix3d rot = Eigen::Matrix3d::Zero();
  Eigen::Vector3d trans = Eigen::Vector3d::Zero();
};

SymOp parse_symop(std::string_view text) {
  std::string s;
  for (char c : text) {
    if (!is_space(c)) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  SymOp op;
  int row = 0;
  std::size_t pos = 0;
  auto fail = [&text]() { return DataError("cif: cannot parse symmetry operation '" + std::string(text) + "'"); };
  while (pos <= s.size()) {
    if (pos == s.size() || s[pos] == ',') {
      ++row;
      ++pos;
      if (row > 3) throw fail();
      continue;
    }
    double sign = 1.0;
    if (s[pos] == '+' || s[pos] == '-') {
      sign = s[pos] == '-' ? -1.0 : 1.0;
      ++pos;
    }
    std::optional<double> number;
    if (pos < s.size() && (std::isdigit(static_cast<unsigned char>(s[pos])) || s[pos] == '.')) {
      std::size_t end = pos;
      while (end < s.size() && (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.')) ++end;
      double value = std::stod(s.substr(pos, end - pos));
      pos = end;
      if (pos < s.size() && s[pos] == '/') {
        ++pos;
        end = pos;
        while (end < s.size() && (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.')) ++end;
        if (end == pos) throw fail();
        value /= std::stod(s.substr(pos, end - pos));
        pos = end;
      }
      number = value;
      if (pos < s.size() && s[pos] == '*') ++pos;
    }
    if (pos < s.size() && (s[pos] == 'x' || s[pos] == 'y' || s[pos] == 'z')) {
      if (row > 2) throw fail();
      op.rot(row, s[pos] - 'x') += sign * number.value_or(1.0);
      ++pos;
    } else if (number) {
      if (row > 2) throw fail();
      op.trans[row] += sign * *number;
    } else {
      throw fail();
    }
  }
  if (row != 3) throw fail();
  return op;
}

std::optional<int> element_from(std::string_view raw) {
  std::string letters;
  for (char c : raw) {
    if (!std::isalpha(static_cast<unsigned char>(c))) break;
    letters += c;
  }
  if (letters.empty()) return std::nullopt;
  letters[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(letters[0])));
  for (std::size_t i = 1; i < letters.size(); ++i) {
    letters[i] = static_cast<char>(std::tolower(static_cast<unsigned char>(letters[i])));
  }
  if (letters.size() >= 2) {
    if (auto z = elements::atomic_number(letters.substr(0, 2))) return z;
  }
  return elements::atomic_number(letters.substr(0, 1));
}

double required_number(const std::string& token, std::string_view what) {
  double v = 0.0;
  if (!parse_number(token, v)) throw DataError("cif: missing " + std::string(what));
  return v;
}

std::string optional_label(const std::vector<std::string>& row, int column) {
  if (column < 0) return "";
  const std::string& v = row[static_cast<std::size_t>(column)];
  return v == "." || v == "?" ? "" : v;
}

bool coincident(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double tol) {
  for (int k = 0; k < 3; ++k) {
    if (std::abs(geometry::wrap_displacement(a[k] - b[k])) >= tol) return false;
  }
  return true;
}

struct Atom {
  int z;
  Eigen::Vector3d f;
  double occ;
  std::string assembly;
  std::string group;
};

struct Position {
  Eigen::Vector3d f;
  std::map<int, double> comp;
  double occ = 0.0;
  std::string assembly;
  std::string group;
  bool labeled() const { return !group.empty(); }
};

std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10f", x);
  return buf;
}

}  // namespace

int Block::Loop::column(std::string_view tag) const {
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == tag) return static_cast<int>(i);
  }
  return -1;
}

bool parse_number(std::string_view token, double& value) {
  if (token.empty() || token == "?" || token == ".") return false;
  std::string s(token.substr(0, token.find('(')));
  try {
    std::size_t used = 0;
    value = std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

Block read_block(std::string_view text) {
  const std::vector<Token> tokens = tokenize(text);
  std::size_t i = 0;
  while (i < tokens.size() && !is_keyword(tokens[i], "data_")) ++i;
  if (i == tokens.size()) throw DataError("cif: no data block");
  Block block;
  block.name = tokens[i].text.substr(5);
  ++i;
  while (i < tokens.size() && !is_keyword(tokens[i], "data_")) {
    const Token& t = tokens[i];
    if (is_keyword(t, "loop_")) {
      Block::Loop loop;
      ++i;
      while (i < tokens.size() && is_tag(tokens[i])) loop.tags.push_back(lower(tokens[i++].text));
      if (loop.tags.empty()) throw DataError("cif: loop_ without tags");
      std::vector<std::string> values;
      while (i < tokens.size() && !is_tag(tokens[i]) && !is_keyword(tokens[i], "loop_") &&
             !is_keyword(tokens[i], "data_")) {
        values.push_back(tokens[i++].text);
      }
      if (values.size() % loop.tags.size() != 0) {
        throw DataError("cif: loop starting with " + loop.tags.front() + " has " +
                        std::to_string(values.size()) + " values for " +
                        std::to_string(loop.tags.size()) + " columns");
      }
      for (std::size_t r = 0; r < values.size(); r += loop.tags.size()) {
        loop.rows.emplace_back(values.begin() + static_cast<long>(r),
                               values.begin() + static_cast<long>(r + loop.tags.size()));
      }
      block.loops.push_back(std::move(loop));
    } else if (is_tag(t)) {
      if (i + 1 >= tokens.size() || is_tag(tokens[i + 1])) {
        throw DataError("cif: tag " + t.text + " has no value");
      }
      block.items[lower(t.text)] = tokens[i + 1].text;
      i += 2;
    } else {
      throw DataError("cif: unexpected token '" + t.text + "'");
    }
  }
  return block;
}

DisorderedCrystal parse_cif(std::string_view text, const CifOptions& options) {
  const Block block = read_block(text);
  auto item = [&block](const char* tag) -> double {
    const auto it = block.items.find(tag);
    if (it == block.items.end()) throw DataError(std::string("cif: missing ") + tag);
    return required_number(it->second, tag);
  };
  LatticeParams lattice{item("_cell_length_a"),    item("_cell_length_b"),
                        item("_cell_length_c"),    item("_cell_angle_alpha"),
                        item("_cell_angle_beta"),  item("_cell_angle_gamma")};
  if (!(lattice.a > 0 && lattice.b > 0 && lattice.c > 0)) {
    throw DataError("cif: non-positive cell length");
  }
  for (double angle : {lattice.alpha, lattice.beta, lattice.gamma}) {
    if (angle < 60.0 || angle > 120.0) {
      throw DataError("rejected: cell angle " + format_number(angle) + " outside [60, 120]");
    }
  }
  const Eigen::Matrix3d cell = geometry::lattice_matrix(lattice);

  std::vector<SymOp> ops;
  const Block::Loop* sites_loop = nullptr;
  for (const auto& loop : block.loops) {
    int col = loop.column("_symmetry_equiv_pos_as_xyz");
    if (col < 0) col = loop.column("_space_group_symop_operation_xyz");
    if (col >= 0) {
      for (const auto& row : loop.rows) ops.push_back(parse_symop(row[static_cast<std::size_t>(col)]));
    }
    if (loop.column("_atom_site_fract_x") >= 0) sites_loop = &loop;
  }
  if (ops.empty()) {
    SymOp identity;
    identity.rot.setIdentity();
    ops.push_back(identity);
  }
  if (!sites_loop) throw DataError("cif: no atom-site loop with fractional coordinates");

  const Block::Loop& loop = *sites_loop;
  const int c_x = loop.column("_atom_site_fract_x");
  const int c_y = loop.column("_atom_site_fract_y");
  const int c_z = loop.column("_atom_site_fract_z");
  const int c_type = loop.column("_atom_site_type_symbol");
  const int c_label = loop.column("_atom_site_label");
  const int c_occ = loop.column("_atom_site_occupancy");
  const int c_assembly = loop.column("_atom_site_disorder_assembly");
  const int c_group = loop.column("_atom_site_disorder_group");
  if (c_y < 0 || c_z < 0) throw DataError("cif: atom-site loop lacks fractional coordinates");
  if (c_type < 0 && c_label < 0) throw DataError("cif: atom-site loop lacks element information");

  std::vector<Atom> atoms;
  for (const auto& row : loop.rows) {
    auto cell_of = [&row](int c) { return row[static_cast<std::size_t>(c)]; };
    std::optional<int> z;
    if (c_type >= 0) z = element_from(cell_of(c_type));
    if (!z && c_label >= 0) z = element_from(cell_of(c_label));
    if (!z) {
      throw DataError("cif: unknown element in row '" +
                      cell_of(c_label >= 0 ? c_label : c_type) + "'");
    }
    if (*z > options.vocab_size) throw DataError("cif: element outside the vocabulary");
    const Eigen::Vector3d f(required_number(cell_of(c_x), "fract_x"),
                            required_number(cell_of(c_y), "fract_y"),
                            required_number(cell_of(c_z), "fract_z"));
    double occ = 1.0;
    if (c_occ >= 0 && !parse_number(cell_of(c_occ), occ)) occ = 1.0;
    if (!(occ > 0.0)) continue;
    const std::string assembly = optional_label(row, c_assembly);
    const std::string group = optional_label(row, c_group);
    std::vector<Eigen::Vector3d> images;
    for (const SymOp& op : ops) {
      Eigen::Vector3d g = op.rot * f + op.trans;
      for (int k = 0; k < 3; ++k) g[k] = wrap_unit(g[k]);
      const bool seen = std::any_of(images.begin(), images.end(), [&](const Eigen::Vector3d& h) {
        return coincident(g, h, options.coincidence_tol);
      });
      if (!seen) images.push_back(g);
    }
    for (const auto& g : images) atoms.push_back({*z, g, occ, assembly, group});
  }

  // Rows at one coordinate form a substitutionally disordered position.
  std::vector<Position> positions;
  for (const Atom& a : atoms) {
    auto it = std::find_if(positions.begin(), positions.end(), [&](const Position& p) {
      return coincident(p.f, a.f, options.coincidence_tol);
    });
    if (it == positions.end()) {
      positions.push_back({a.f, {}, 0.0, a.assembly, a.group});
      it = positions.end() - 1;
    }
    it->comp[a.z] += a.occ;
    it->occ += a.occ;
    if (it->assembly.empty()) it->assembly = a.assembly;
    if (it->group.empty()) it->group = a.group;
  }
  for (const auto& p : positions) {
    if (p.occ > 1.0 + 1e-3) {
      throw DataError("cif: total occupancy " + format_number(p.occ) + " exceeds 1 at one site");
    }
  }

  auto distance = [&cell](const Position& p, const Position& q) {
    Eigen::Vector3d d;
    for (int k = 0; k < 3; ++k) d[k] = geometry::wrap_displacement(q.f[k] - p.f[k]);
    double best = std::numeric_limits<double>::infinity();
    for (int x = -1; x <= 1; ++x)
      for (int y = -1; y <= 1; ++y)
        for (int z = -1; z <= 1; ++z) best = std::min(best, (cell * (d + Eigen::Vector3d(x, y, z))).norm());
    return best;
  };
  auto same_elements = [](const Position& p, const Position& q) {
    if (p.comp.size() != q.comp.size()) return false;
    for (const auto& [z, occ] : p.comp) {
      if (!q.comp.contains(z)) return false;
    }
    return true;
  };

  // Alternative positions of one atom form a positionally disordered site.
  std::vector<std::vector<std::size_t>> groups;
  std::vector<bool> assigned(positions.size(), false);
  for (std::size_t p = 0; p < positions.size(); ++p) {
    if (assigned[p]) continue;
    assigned[p] = true;
    std::vector<std::size_t> group{p};
    double total = positions[p].occ;
    const Position& head = positions[p];
    while (true) {
      std::size_t best = positions.size();
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t q = 0; q < positions.size(); ++q) {
        if (assigned[q]) continue;
        const Position& cand = positions[q];
        if (total + cand.occ > 1.0 + 1e-3) continue;
        const double d = distance(head, cand);
        bool ok = false;
        if (head.labeled()) {
          ok = cand.labeled() && cand.assembly == head.assembly && d <= options.assembly_cutoff &&
               std::none_of(group.begin(), group.end(), [&](std::size_t g) {
                 return positions[g].group == cand.group;
               });
        } else {
          ok = !cand.labeled() && head.occ < 1.0 - 1e-6 && same_elements(head, cand) &&
               d <= options.unlabeled_cutoff;
        }
        if (ok && d < best_d) {
          best = q;
          best_d = d;
        }
      }
      if (best == positions.size()) break;
      assigned[best] = true;
      group.push_back(best);
      total += positions[best].occ;
    }
    groups.push_back(std::move(group));
  }

  const int n = static_cast<int>(groups.size());
  if (n < options.min_atoms || n > options.max_atoms) {
    throw DataError("rejected: " + std::to_string(n) + " sites outside [" +
                    std::to_string(options.min_atoms) + ", " + std::to_string(options.max_atoms) + "]");
  }
  std::vector<Site> sites;
  for (const auto& group : groups) {
    if (static_cast<int>(group.size()) > options.order) {
      throw DataError("rejected: " + std::to_string(group.size()) +
                      " alternative positions exceed order " + std::to_string(options.order));
    }
    Site site;
    site.s = Eigen::VectorXd::Zero(options.vocab_size);
    site.positions = Eigen::MatrixX3d::Zero(options.order, 3);
    site.pos_weights = Eigen::VectorXd::Zero(options.order);
    double total = 0.0;
    for (std::size_t l = 0; l < group.size(); ++l) {
      const Position& p = positions[group[l]];
      site.positions.row(static_cast<Eigen::Index>(l)) = p.f.transpose();
      site.pos_weights[static_cast<Eigen::Index>(l)] = p.occ;
      for (const auto& [z, occ] : p.comp) site.s[z - 1] += occ;
      total += p.occ;
    }
    site.s /= total;
    site.pos_weights /= total;
    sites.push_back(std::move(site));
  }
  return DisorderedCrystal::create(lattice, std::move(sites), options.vocab_size,
                                   std::max(kDefaultMaxSites, options.max_atoms));
}

std::string write_cif(const DisorderedCrystal& crystal, std::string_view name) {
  std::ostringstream out;
  const LatticeParams& l = crystal.lattice();
  out << "data_" << name << "\n"
      << "_cell_length_a " << format_number(l.a) << "\n"
      << "_cell_length_b " << format_number(l.b) << "\n"
      << "_cell_length_c " << format_number(l.c) << "\n"
      << "_cell_angle_alpha " << format_number(l.alpha) << "\n"
      << "_cell_angle_beta " << format_number(l.beta) << "\n"
      << "_cell_angle_gamma " << format_number(l.gamma) << "\n"
      << "loop_\n_symmetry_equiv_pos_as_xyz\n'x, y, z'\n"
      << "loop_\n"
      << "_atom_site_label\n_atom_site_type_symbol\n"
      << "_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n"
      << "_atom_site_occupancy\n_atom_site_disorder_assembly\n_atom_site_disorder_group\n";
  std::map<int, int> counters;
  for (int i = 0; i < crystal.num_sites(); ++i) {
    const Site& site = crystal.site(i);
    const bool pd = site.is_pd();
    for (int p = 0; p < site.order(); ++p) {
      if (site.pos_weights[p] <= 0.0) continue;
      for (Eigen::Index k = 0; k < site.s.size(); ++k) {
        if (site.s[k] <= 0.0) continue;
        const int z = DisorderedCrystal::atomic_number(static_cast<int>(k));
        const std::string symbol(elements::symbol(z));
        out << symbol << ++counters[z] << " " << symbol;
        for (int a = 0; a < 3; ++a) out << " " << format_number(site.positions(p, a));
        out << " " << format_number(site.pos_weights[p] * site.s[k]);
        if (pd) {
          out << " A" << (i + 1) << " " << (p + 1) << "\n";
        } else {
          out << " . .\n";
        }
      }
    }
  }
  return out.str();
}

}  // namespace dflow::cif
