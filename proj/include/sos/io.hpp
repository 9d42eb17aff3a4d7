#pragma once

#include <openssl/sha.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sos/lattice.hpp"
#include "sos/model.hpp"

namespace sos {

inline constexpr const char* kToolVersion = "0.1.0";

/// Shortest round-trip decimal for a double; "inf"/"-inf"/"nan" otherwise.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline double parse_p(const std::string& s) {
  if (s == "inf" || s == "infinity" || s == "Inf") return kInf;
  std::size_t used = 0;
  const double p = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("cannot parse p from '" + s + "'");
  return p;
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    out.push_back(std::stoi(item, &used));
    if (used != item.size()) throw std::invalid_argument("cannot parse integer list '" + s + "'");
  }
  return out;
}

/// Boundary spec: zero | constant:h | staircase:a1,...,an/b1,...,bn.
inline BoundaryCondition parse_bc(const std::string& spec, int L, int M) {
  if (spec == "zero") return BoundaryCondition::zero();
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "constant" && !rest.empty()) return BoundaryCondition::constant(std::stoi(rest));
  if (kind == "staircase") {
    const auto slash = rest.find('/');
    if (slash == std::string::npos) throw std::invalid_argument("staircase spec needs a/b: '" + spec + "'");
    auto a = parse_int_list(rest.substr(0, slash));
    auto b = parse_int_list(rest.substr(slash + 1));
    const int n = static_cast<int>(a.size());
    return staircase_bc(n, std::move(a), std::move(b), L, M);
  }
  throw std::invalid_argument("unknown boundary spec '" + spec + "'");
}

// ---------------------------------------------------------------------------
// HeightField text format: header "L M p beta bc", then rows y = -M..M.

struct LoadedField {
  HeightField field;
  ModelParams params;
};

inline void save_field(std::ostream& os, const HeightField& f, const ModelParams& params) {
  const Region& r = f.region();
  if (!r.is_rectangular()) throw std::invalid_argument("only rectangular fields can be saved");
  os << r.L() << ' ' << r.M() << ' ' << params.p_string() << ' ' << format_double(params.beta()) << ' '
     << f.bc().describe() << '\n';
  for (int y = -r.M(); y <= r.M(); ++y) {
    for (int x = -r.L(); x <= r.L(); ++x) os << (x > -r.L() ? " " : "") << f.at({x, y});
    os << '\n';
  }
}

inline LoadedField load_field(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw std::invalid_argument("height field: missing header");
  std::istringstream hs(header);
  int L = -1, M = -1;
  std::string p, beta, bc;
  if (!(hs >> L >> M >> p >> beta >> bc) || L < 0 || M < 0)
    throw std::invalid_argument("height field: header must read 'L M p beta bc'");
  auto region = std::make_shared<const Region>(Region::rectangle(L, M));
  HeightField f(region, parse_bc(bc, L, M));
  for (int y = -M; y <= M; ++y) {
    std::string line;
    if (!std::getline(is, line)) throw std::invalid_argument("height field: missing row " + std::to_string(y));
    std::istringstream ls(line);
    for (int x = -L; x <= L; ++x) {
      int h = 0;
      if (!(ls >> h)) throw std::invalid_argument("height field: short row " + std::to_string(y));
      f.set({x, y}, h);
    }
    std::string extra;
    if (ls >> extra) throw std::invalid_argument("height field: long row " + std::to_string(y));
  }
  return {std::move(f), ModelParams(parse_p(p), std::stod(beta))};
}

// ---------------------------------------------------------------------------
// Configuration and hashing

/// key=value configuration; later assignments win. Lines starting with '#'
/// and blank lines are ignored.
class Config {
 public:
  static Config parse(std::istream& is) {
    Config c;
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
      ++n;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(n) + " lacks '='");
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
  }

  static Config parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file " + path.string());
    return parse(in);
  }

  void set(const std::string& key, const std::string& value) {
    if (key.empty()) throw std::invalid_argument("config key is empty");
    values_[key] = value;
  }
  void erase(const std::string& key) { values_.erase(key); }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("missing required setting '" + key + "'");
    return it->second;
  }
  std::string get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Sorted key=value lines; the hashed form.
  std::string canonical() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
    return s;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

inline std::string sha1_hex(const std::string& data) {
  unsigned char md[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(data.data()), data.size(), md);
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned char c : md) {
    out += digits[c >> 4];
    out += digits[c & 15];
  }
  return out;
}

/// Hash of text as git would store it as a blob.
inline std::string git_blob_hash(const std::string& text) {
  std::string blob = "blob " + std::to_string(text.size());
  blob.push_back('\0');
  return sha1_hex(blob + text);
}

inline std::string config_hash(const Config& c) { return git_blob_hash(c.canonical()); }

// ---------------------------------------------------------------------------
// Output files

class OutputExists : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Comma-separated writer with a header row.
class CsvWriter {
 public:
  CsvWriter(std::ostream& os, const std::vector<std::string>& header) : os_(os), width_(header.size()) {
    write(header);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) throw std::invalid_argument("csv row width does not match the header");
    write(cells);
  }

 private:
  void write(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].find_first_of(",\"\n") != std::string::npos) {
        std::string q = "\"";
        for (char c : cells[i]) q += c == '"' ? std::string("\"\"") : std::string(1, c);
        os_ << (i ? "," : "") << q << '"';
      } else {
        os_ << (i ? "," : "") << cells[i];
      }
    }
    os_ << '\n';
  }

  std::ostream& os_;
  std::size_t width_;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Directory <root>/<config hash> for one run. Outputs are written to a
/// staging directory that becomes <root>/<hash> when the manifest is written;
/// an abandoned run leaves nothing behind. Existing files are never
/// overwritten.
class RunDirectory {
 public:
  RunDirectory(const std::filesystem::path& root, const Config& config, std::string command)
      : config_(config), hash_(config_hash(config)), dir_(root / hash_),
        staging_(root / (".partial-" + hash_)), command_(std::move(command)), started_(utc_timestamp()) {
    if (std::filesystem::exists(dir_))
      throw OutputExists("run directory " + dir_.string() + " already exists; outputs are append-only");
    std::filesystem::remove_all(staging_);
    std::filesystem::create_directories(staging_);
  }

  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;

  ~RunDirectory() {
    std::error_code ec;
    if (!finished_) std::filesystem::remove_all(staging_, ec);
  }

  /// Final location of the run.
  const std::filesystem::path& path() const { return dir_; }
  const std::string& hash() const { return hash_; }

  std::ofstream create(const std::string& name) {
    if (finished_) throw std::logic_error("run already finished");
    const auto p = staging_ / name;
    if (std::filesystem::exists(p)) throw OutputExists("refusing to overwrite " + (dir_ / name).string());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot create " + p.string());
    files_.push_back(name);
    return out;
  }

  /// Writes manifest.json and moves the run into place; call once after all
  /// outputs are closed.
  void finish(std::uint64_t seed, const nlohmann::json& extra = nlohmann::json::object()) {
    if (finished_) throw std::logic_error("run already finished");
    nlohmann::ordered_json m;
    m["tool"] = "sos";
    m["version"] = kToolVersion;
    m["command"] = command_;
    m["config"] = config_.values();
    m["config_text"] = config_.canonical();
    m["config_hash"] = hash_;
    m["seed"] = seed;
    m["started"] = started_;
    m["finished"] = utc_timestamp();
    m["files"] = files_;
    m["extra"] = extra;
    std::ofstream(staging_ / "manifest.json") << m.dump(2) << '\n';
    if (std::filesystem::exists(dir_))
      throw OutputExists("run directory " + dir_.string() + " appeared during the run; outputs are append-only");
    std::filesystem::rename(staging_, dir_);
    finished_ = true;
  }

 private:
  Config config_;
  std::string hash_;
  std::filesystem::path dir_;
  std::filesystem::path staging_;
  std::string command_;
  std::string started_;
  std::vector<std::string> files_;
  bool finished_ = false;
};

/// True when the manifest's stored config re-hashes to its recorded hash.
inline bool manifest_hash_matches(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) return false;
  const auto m = nlohmann::json::parse(in);
  Config c;
  for (const auto& [k, v] : m.at("config").items()) c.set(k, v.get<std::string>());
  return config_hash(c) == m.at("config_hash").get<std::string>() &&
         c.canonical() == m.at("config_text").get<std::string>();
}

}  // namespace sos
