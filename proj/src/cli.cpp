#include "stylolab/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_set>

#include "CLI11.hpp"
#include "json.hpp"
#include "stylolab/error.hpp"
#include "stylolab/patching.hpp"
#include "stylolab/probes.hpp"

namespace stylolab::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string trimmed(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

int64_t to_int(const std::string& section, const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, "[" + section + "] " + key + ": not an integer: " + v);
  }
}

double to_real(const std::string& section, const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, "[" + section + "] " + key + ": not a number: " + v);
  }
}

std::string real_str(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

template <typename T>
std::string join_ints(const std::vector<T>& xs) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};
constexpr int kPaletteSize = 6;

}  // namespace

const std::string* IniFile::find(const std::string& section, const std::string& key) const {
  for (const Section& s : sections) {
    if (s.name != section) continue;
    for (const auto& [k, v] : s.entries) {
      if (k == key) return &v;
    }
  }
  return nullptr;
}

void IniFile::set(const std::string& section, const std::string& key, const std::string& value) {
  for (Section& s : sections) {
    if (s.name != section) continue;
    for (auto& [k, v] : s.entries) {
      if (k == key) {
        v = value;
        return;
      }
    }
    s.entries.emplace_back(key, value);
    return;
  }
  sections.push_back({section, {{key, value}}});
}

IniFile parse_ini(const std::string& text) {
  IniFile f;
  std::string section;
  size_t lineno = 0;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trimmed(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw Error(ErrorCode::InvalidConfig,
                    "config line " + std::to_string(lineno) + ": malformed section header");
      }
      section = trimmed(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::InvalidConfig,
                  "config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trimmed(line.substr(0, eq));
    const std::string value = trimmed(line.substr(eq + 1));
    if (key.empty()) {
      throw Error(ErrorCode::InvalidConfig,
                  "config line " + std::to_string(lineno) + ": empty key");
    }
    if (f.find(section, key) != nullptr) {
      throw Error(ErrorCode::InvalidConfig,
                  "config line " + std::to_string(lineno) + ": duplicate key " + key);
    }
    f.set(section, key, value);
  }
  return f;
}

std::string serialize_ini(const IniFile& f) {
  std::string out;
  for (const IniFile::Section& s : f.sections) {
    if (!out.empty()) out += "\n";
    out += "[" + s.name + "]\n";
    for (const auto& [k, v] : s.entries) out += k + " = " + v + "\n";
  }
  return out;
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

scoring::Scorer scorer_from_flag(const std::string& flag, int64_t patch_n) {
  if (flag == "mean") return scoring::Scorer::mean_cosine();
  if (flag == "li") return scoring::Scorer::maxsim();
  if (flag == "pli") return scoring::Scorer::pli(patch_n);
  throw Error(ErrorCode::InvalidConfig, "unknown scorer '" + flag + "' (want mean|li|pli)");
}

std::string flag_from_scorer(const scoring::Scorer& s) {
  switch (s.kind) {
    case scoring::ScorerKind::MeanCosine: return "mean";
    case scoring::ScorerKind::MaxSim: return "li";
    case scoring::ScorerKind::Pli: return "pli";
  }
  return "?";
}

encoder::PatchStrategy strategy_from_flag(const std::string& flag,
                                          const std::vector<int64_t>& positions) {
  if (flag == "full-stream") return encoder::PatchStrategy::full_stream();
  if (flag == "layer-delta") return encoder::PatchStrategy::layer_delta();
  if (flag == "positions") {
    if (positions.empty()) {
      throw Error(ErrorCode::InvalidConfig, "positions strategy needs a positions list");
    }
    return encoder::PatchStrategy::at_positions(positions);
  }
  throw Error(ErrorCode::InvalidConfig,
              "unknown strategy '" + flag + "' (want full-stream|layer-delta|positions)");
}

ExperimentConfig config_from_ini(const IniFile& f) {
  ExperimentConfig cfg;
  for (const IniFile::Section& s : f.sections) {
    for (const auto& [key, value] : s.entries) {
      bool known = true;
      if (s.name == "experiment") {
        if (key == "seed") cfg.seed = static_cast<uint64_t>(to_int(s.name, key, value));
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "scorers") {
          cfg.scorers.clear();
          for (const std::string& part : split(value, ',')) {
            if (!trimmed(part).empty()) cfg.scorers.push_back(scorer_from_flag(trimmed(part)));
          }
        } else if (key == "strategy") cfg.strategy = value;
        else if (key == "positions") {
          cfg.positions.clear();
          for (const std::string& part : split(value, ',')) {
            if (!trimmed(part).empty()) cfg.positions.push_back(to_int(s.name, key, trimmed(part)));
          }
        } else if (key == "pli_n") {
          const int64_t n = to_int(s.name, key, value);
          for (scoring::Scorer& sc : cfg.scorers) {
            if (sc.kind == scoring::ScorerKind::Pli) sc.patch_n = n;
          }
        } else if (key == "tier_a") cfg.tiers.tier_a = static_cast<int>(to_int(s.name, key, value));
        else if (key == "tier_b") cfg.tiers.tier_b = static_cast<int>(to_int(s.name, key, value));
        else if (key == "tier_c") cfg.tiers.tier_c = static_cast<int>(to_int(s.name, key, value));
        else known = false;
      } else if (s.name == "corpus") {
        if (key == "n_authors") cfg.corpus.n_authors = static_cast<int>(to_int(s.name, key, value));
        else if (key == "n_sets") cfg.corpus.n_sets = static_cast<int>(to_int(s.name, key, value));
        else if (key == "n_domains") cfg.corpus.n_domains = static_cast<int>(to_int(s.name, key, value));
        else if (key == "passages_per_set") cfg.corpus.passages_per_set = static_cast<int>(to_int(s.name, key, value));
        else if (key == "target_len") cfg.corpus.target_len = static_cast<int>(to_int(s.name, key, value));
        else if (key == "len_slack") cfg.corpus.len_slack = static_cast<int>(to_int(s.name, key, value));
        else known = false;
      } else if (s.name == "encoder") {
        if (key == "n_layers") cfg.encoder.n_layers = static_cast<int>(to_int(s.name, key, value));
        else if (key == "d_model") cfg.encoder.d_model = static_cast<int>(to_int(s.name, key, value));
        else if (key == "heads") cfg.encoder.heads = static_cast<int>(to_int(s.name, key, value));
        else if (key == "mlp_mult") cfg.encoder.mlp_mult = static_cast<int>(to_int(s.name, key, value));
        else if (key == "max_len") cfg.encoder.max_len = static_cast<int>(to_int(s.name, key, value));
        else known = false;
      } else if (s.name == "train") {
        if (key == "temperature") cfg.train.temperature = to_real(s.name, key, value);
        else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(to_int(s.name, key, value));
        else if (key == "steps") cfg.train.steps = static_cast<int>(to_int(s.name, key, value));
        else if (key == "lr") cfg.train.lr = to_real(s.name, key, value);
        else if (key == "weight_decay") cfg.train.weight_decay = to_real(s.name, key, value);
        else if (key == "checkpoint_steps") {
          cfg.train.checkpoint_steps.clear();
          for (const std::string& part : split(value, ',')) {
            if (!trimmed(part).empty()) {
              cfg.train.checkpoint_steps.push_back(
                  static_cast<int>(to_int(s.name, key, trimmed(part))));
            }
          }
        } else known = false;
      } else if (s.name == "probe") {
        if (key == "n_train") cfg.probe_train = static_cast<int>(to_int(s.name, key, value));
        else if (key == "n_test") cfg.probe_test = static_cast<int>(to_int(s.name, key, value));
        else if (key == "lambda") cfg.probe_lambda = to_real(s.name, key, value);
        else known = false;
      } else {
        throw Error(ErrorCode::InvalidConfig, "unknown config section [" + s.name + "]");
      }
      if (!known) {
        throw Error(ErrorCode::InvalidConfig, "unknown key '" + key + "' in [" + s.name + "]");
      }
    }
  }
  if (cfg.scorers.empty()) {
    cfg.scorers = {scoring::Scorer::mean_cosine(), scoring::Scorer::maxsim(),
                   scoring::Scorer::pli(2)};
  }
  strategy_from_flag(cfg.strategy, cfg.strategy == "positions" ? cfg.positions
                                                               : std::vector<int64_t>{0});
  if (cfg.corpus.target_len + cfg.corpus.len_slack > cfg.encoder.max_len) {
    throw Error(ErrorCode::InvalidConfig,
                "corpus passages can exceed encoder max_len; raise [encoder] max_len");
  }
  // one seed drives every module
  cfg.corpus.seed = cfg.seed;
  cfg.encoder.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::MissingInput, "cannot read config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return config_from_ini(parse_ini(ss.str()));
}

std::string canonical_config(const ExperimentConfig& cfg) {
  IniFile f;
  std::vector<std::string> flags;
  for (const scoring::Scorer& s : cfg.scorers) flags.push_back(flag_from_scorer(s));
  std::string scorer_list;
  for (size_t i = 0; i < flags.size(); ++i) scorer_list += (i ? "," : "") + flags[i];
  int64_t pli_n = 2;
  for (const scoring::Scorer& s : cfg.scorers) {
    if (s.kind == scoring::ScorerKind::Pli) pli_n = s.patch_n;
  }
  f.set("experiment", "scorers", scorer_list);
  f.set("experiment", "pli_n", std::to_string(pli_n));
  f.set("experiment", "strategy", cfg.strategy);
  f.set("experiment", "positions", join_ints(cfg.positions));
  f.set("experiment", "tier_a", std::to_string(cfg.tiers.tier_a));
  f.set("experiment", "tier_b", std::to_string(cfg.tiers.tier_b));
  f.set("experiment", "tier_c", std::to_string(cfg.tiers.tier_c));
  f.set("corpus", "n_authors", std::to_string(cfg.corpus.n_authors));
  f.set("corpus", "n_sets", std::to_string(cfg.corpus.n_sets));
  f.set("corpus", "n_domains", std::to_string(cfg.corpus.n_domains));
  f.set("corpus", "passages_per_set", std::to_string(cfg.corpus.passages_per_set));
  f.set("corpus", "target_len", std::to_string(cfg.corpus.target_len));
  f.set("corpus", "len_slack", std::to_string(cfg.corpus.len_slack));
  f.set("encoder", "n_layers", std::to_string(cfg.encoder.n_layers));
  f.set("encoder", "d_model", std::to_string(cfg.encoder.d_model));
  f.set("encoder", "heads", std::to_string(cfg.encoder.heads));
  f.set("encoder", "mlp_mult", std::to_string(cfg.encoder.mlp_mult));
  f.set("encoder", "max_len", std::to_string(cfg.encoder.max_len));
  f.set("train", "temperature", real_str(cfg.train.temperature));
  f.set("train", "batch_size", std::to_string(cfg.train.batch_size));
  f.set("train", "steps", std::to_string(cfg.train.steps));
  f.set("train", "lr", real_str(cfg.train.lr));
  f.set("train", "weight_decay", real_str(cfg.train.weight_decay));
  f.set("train", "checkpoint_steps", join_ints(cfg.train.checkpoint_steps));
  f.set("probe", "n_train", std::to_string(cfg.probe_train));
  f.set("probe", "n_test", std::to_string(cfg.probe_test));
  f.set("probe", "lambda", real_str(cfg.probe_lambda));
  return serialize_ini(f);
}

std::string config_hash(const ExperimentConfig& cfg) {
  return hex64(fnv1a64(canonical_config(cfg)));
}

std::string meta_line(const std::string& kind, const std::string& hash, uint64_t seed,
                      const std::string& strategy) {
  return "# stylolab " + kind + " v1; config=" + hash + " seed=" + std::to_string(seed) +
         " strategy=" + strategy + "\n";
}

std::optional<MetaFields> parse_meta_line(const std::string& line) {
  const std::string prefix = "# stylolab ";
  if (line.rfind(prefix, 0) != 0) return std::nullopt;
  const size_t semi = line.find("; ");
  if (semi == std::string::npos) return std::nullopt;
  std::string head = line.substr(prefix.size(), semi - prefix.size());
  const size_t vpos = head.rfind(" v");
  if (vpos == std::string::npos) return std::nullopt;
  MetaFields m;
  m.kind = head.substr(0, vpos);
  std::istringstream rest(line.substr(semi + 2));
  std::string tok;
  while (rest >> tok) {
    const size_t eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = tok.substr(0, eq);
    const std::string v = tok.substr(eq + 1);
    if (k == "config") m.config = v;
    else if (k == "seed") m.seed = static_cast<uint64_t>(std::stoull(v));
    else if (k == "strategy") m.strategy = v;
  }
  if (m.config.empty()) return std::nullopt;
  return m;
}

// ---------------------------------------------------------------------------
// SVG

namespace {

struct Frame {
  double w = 640, h = 400;
  double left = 70, right = 20, top = 40, bottom = 50;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;

  double px(double x) const {
    return left + (x - xmin) / (xmax - xmin) * (w - left - right);
  }
  double py(double y) const {
    return h - bottom - (y - ymin) / (ymax - ymin) * (h - top - bottom);
  }
};

void fit_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  } else {
    const double pad = (hi - lo) * 0.05;
    lo -= pad;
    hi += pad;
  }
}

std::string svg_open(double w, double h) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << " " << h << "\" font-family=\"monospace\">\n"
    << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  return s.str();
}

void draw_axes(std::ostringstream& s, const Frame& fr, const std::string& title,
               const std::string& xlabel, const std::string& ylabel) {
  s << "<rect x=\"" << fr.left << "\" y=\"" << fr.top << "\" width=\""
    << fr.w - fr.left - fr.right << "\" height=\"" << fr.h - fr.top - fr.bottom
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  s << "<text x=\"" << fr.w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(title) << "</text>\n";
  s << "<text x=\"" << fr.w / 2 << "\" y=\"" << fr.h - 12
    << "\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(xlabel) << "</text>\n";
  s << "<text x=\"16\" y=\"" << fr.h / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
    << "transform=\"rotate(-90 16 " << fr.h / 2 << ")\">" << xml_escape(ylabel) << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = fr.xmin + (fr.xmax - fr.xmin) * i / 4.0;
    const double fy = fr.ymin + (fr.ymax - fr.ymin) * i / 4.0;
    const double gx = fr.px(fx);
    const double gy = fr.py(fy);
    s << "<line x1=\"" << gx << "\" y1=\"" << fr.h - fr.bottom << "\" x2=\"" << gx << "\" y2=\""
      << fr.h - fr.bottom + 4 << "\" stroke=\"#333\"/>\n";
    s << "<text x=\"" << gx << "\" y=\"" << fr.h - fr.bottom + 16
      << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt_g(fx) << "</text>\n";
    s << "<line x1=\"" << fr.left - 4 << "\" y1=\"" << gy << "\" x2=\"" << fr.left << "\" y2=\""
      << gy << "\" stroke=\"#333\"/>\n";
    s << "<text x=\"" << fr.left - 7 << "\" y=\"" << gy + 3
      << "\" text-anchor=\"end\" font-size=\"10\">" << fmt_g(fy) << "</text>\n";
  }
}

void draw_legend(std::ostringstream& s, const Frame& fr, const std::vector<std::string>& labels) {
  const double x = fr.w - fr.right - 150;
  double y = fr.top + 14;
  for (size_t i = 0; i < labels.size(); ++i) {
    const char* color = kPalette[i % kPaletteSize];
    s << "<line x1=\"" << x << "\" y1=\"" << y - 4 << "\" x2=\"" << x + 18 << "\" y2=\"" << y - 4
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << x + 24 << "\" y=\"" << y << "\" font-size=\"11\">"
      << xml_escape(labels[i]) << "</text>\n";
    y += 15;
  }
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<Series>& series) {
  Frame fr;
  bool any = false;
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  for (const Series& sr : series) {
    for (size_t i = 0; i < sr.xs.size() && i < sr.ys.size(); ++i) {
      if (!std::isfinite(sr.xs[i]) || !std::isfinite(sr.ys[i])) continue;
      if (!any) {
        xmin = xmax = sr.xs[i];
        ymin = ymax = sr.ys[i];
        any = true;
      } else {
        xmin = std::min(xmin, sr.xs[i]);
        xmax = std::max(xmax, sr.xs[i]);
        ymin = std::min(ymin, sr.ys[i]);
        ymax = std::max(ymax, sr.ys[i]);
      }
    }
  }
  if (!any) {
    xmin = ymin = 0;
    xmax = ymax = 1;
  }
  fit_range(xmin, xmax);
  fit_range(ymin, ymax);
  fr.xmin = xmin;
  fr.xmax = xmax;
  fr.ymin = ymin;
  fr.ymax = ymax;

  std::ostringstream s;
  s << svg_open(fr.w, fr.h);
  draw_axes(s, fr, title, xlabel, ylabel);
  std::vector<std::string> labels;
  for (size_t k = 0; k < series.size(); ++k) {
    const Series& sr = series[k];
    labels.push_back(sr.label);
    const char* color = kPalette[k % kPaletteSize];
    std::string points;
    auto flush = [&]() {
      if (!points.empty()) {
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\""
          << points << "\"/>\n";
        points.clear();
      }
    };
    for (size_t i = 0; i < sr.xs.size() && i < sr.ys.size(); ++i) {
      if (!std::isfinite(sr.xs[i]) || !std::isfinite(sr.ys[i])) {
        flush();
        continue;
      }
      const double gx = fr.px(sr.xs[i]);
      const double gy = fr.py(sr.ys[i]);
      if (!points.empty()) points += " ";
      points += fmt_g(gx) + std::string(",") + fmt_g(gy);
      s << "<circle cx=\"" << fmt_g(gx) << "\" cy=\"" << fmt_g(gy) << "\" r=\"2\" fill=\""
        << color << "\"/>\n";
    }
    flush();
  }
  draw_legend(s, fr, labels);
  s << "</svg>\n";
  return s.str();
}

std::string svg_histogram(const std::string& title, const std::string& xlabel,
                          const std::vector<HistGroup>& groups, int bins) {
  if (bins < 1) bins = 1;
  double lo = 0, hi = 1;
  bool any = false;
  for (const HistGroup& g : groups) {
    for (double v : g.values) {
      if (!std::isfinite(v)) continue;
      if (!any) {
        lo = hi = v;
        any = true;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!(hi > lo)) hi = lo + 1;

  std::vector<std::vector<int>> counts(groups.size(), std::vector<int>(static_cast<size_t>(bins), 0));
  int peak = 1;
  for (size_t g = 0; g < groups.size(); ++g) {
    for (double v : groups[g].values) {
      if (!std::isfinite(v)) continue;
      int b = static_cast<int>((v - lo) / (hi - lo) * bins);
      b = std::clamp(b, 0, bins - 1);
      peak = std::max(peak, ++counts[g][static_cast<size_t>(b)]);
    }
  }

  Frame fr;
  fr.xmin = lo;
  fr.xmax = hi;
  fr.ymin = 0;
  fr.ymax = peak * 1.05;
  std::ostringstream s;
  s << svg_open(fr.w, fr.h);
  draw_axes(s, fr, title, xlabel, "count");
  std::vector<std::string> labels;
  for (size_t g = 0; g < groups.size(); ++g) {
    labels.push_back(groups[g].label);
    const char* color = kPalette[g % kPaletteSize];
    for (int b = 0; b < bins; ++b) {
      const int c = counts[g][static_cast<size_t>(b)];
      if (c == 0) continue;
      const double x0 = fr.px(lo + (hi - lo) * b / bins);
      const double x1 = fr.px(lo + (hi - lo) * (b + 1) / bins);
      const double y = fr.py(c);
      s << "<rect x=\"" << fmt_g(x0) << "\" y=\"" << fmt_g(y) << "\" width=\""
        << fmt_g(x1 - x0) << "\" height=\"" << fmt_g(fr.py(0) - y) << "\" fill=\"" << color
        << "\" fill-opacity=\"0.45\"/>\n";
    }
  }
  draw_legend(s, fr, labels);
  s << "</svg>\n";
  return s.str();
}

std::string svg_heatmap(const std::string& title, const std::vector<std::string>& rows,
                        const std::vector<std::vector<double>>& values) {
  const size_t nrows = values.size();
  size_t ncols = 0;
  double lo = 0, hi = 0;
  bool any = false;
  for (const auto& row : values) {
    ncols = std::max(ncols, row.size());
    for (double v : row) {
      if (!std::isfinite(v)) continue;
      if (!any) {
        lo = hi = v;
        any = true;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!(hi > lo)) hi = lo + 1;
  const double cw = 40, ch = 24, left = 130, top = 50;
  const double w = left + ncols * cw + 30;
  const double h = top + nrows * ch + 60;

  auto shade = [&](double v) {
    const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    // light parchment to deep blue
    const int r = static_cast<int>(247 + t * (8 - 247));
    const int g = static_cast<int>(251 + t * (81 - 251));
    const int b = static_cast<int>(255 + t * (156 - 255));
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return std::string(buf);
  };

  std::ostringstream s;
  s << svg_open(w, h);
  s << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(title) << "</text>\n";
  for (size_t r = 0; r < nrows; ++r) {
    s << "<text x=\"" << left - 8 << "\" y=\"" << top + r * ch + ch / 2 + 4
      << "\" text-anchor=\"end\" font-size=\"11\">" << xml_escape(rows[r]) << "</text>\n";
    for (size_t c = 0; c < values[r].size(); ++c) {
      const double v = values[r][c];
      const std::string fill = std::isfinite(v) ? shade(v) : "#cccccc";
      s << "<rect x=\"" << left + c * cw << "\" y=\"" << top + r * ch << "\" width=\"" << cw
        << "\" height=\"" << ch << "\" fill=\"" << fill << "\" stroke=\"white\"/>\n";
    }
  }
  for (size_t c = 0; c < ncols; ++c) {
    s << "<text x=\"" << left + c * cw + cw / 2 << "\" y=\"" << top + nrows * ch + 16
      << "\" text-anchor=\"middle\" font-size=\"10\">" << c << "</text>\n";
  }
  s << "<text x=\"" << left << "\" y=\"" << top + nrows * ch + 40 << "\" font-size=\"10\">"
    << "layer; shade " << fmt_g(lo) << " &#8594; " << fmt_g(hi) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

// ---------------------------------------------------------------------------
// subcommands

namespace {

struct Ctx {
  ExperimentConfig cfg;
  std::string hash;
  std::string out;
  std::string scorer_flag;    // empty = all configured
  std::string strategy_flag;  // empty = config strategy
  std::string tier_flag = "all";
  int checkpoint_flag = -1;  // -1 = default (final step)
};

std::string strategy_name(const Ctx& ctx) {
  return ctx.strategy_flag.empty() ? ctx.cfg.strategy : ctx.strategy_flag;
}

encoder::PatchStrategy active_strategy(const Ctx& ctx) {
  return strategy_from_flag(strategy_name(ctx), ctx.cfg.positions);
}

std::vector<scoring::Scorer> selected_scorers(const Ctx& ctx) {
  if (ctx.scorer_flag.empty()) return ctx.cfg.scorers;
  int64_t pli_n = 2;
  for (const scoring::Scorer& s : ctx.cfg.scorers) {
    if (s.kind == scoring::ScorerKind::Pli) pli_n = s.patch_n;
  }
  return {scorer_from_flag(ctx.scorer_flag, pli_n)};
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path);
  f << content;
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path);
}

void write_svg(const Ctx& ctx, const std::string& kind, const std::string& path,
               const std::string& svg) {
  std::string meta = meta_line(kind, ctx.hash, ctx.cfg.seed, strategy_name(ctx));
  meta.pop_back();  // no newline inside the comment
  write_text(path, "<!-- " + meta + " -->\n" + svg);
}

std::string slurp_file(const std::string& path, const std::string& producer) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw Error(ErrorCode::MissingInput, path + " not found; run " + producer + " first");
  }
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string corpus_path(const Ctx& ctx) { return ctx.out + "/corpus.jsonl"; }
std::string sidecar_path(const Ctx& ctx) { return ctx.out + "/corpus_side.json"; }
std::string train_dir(const Ctx& ctx, const scoring::Scorer& s) {
  return ctx.out + "/train_" + flag_from_scorer(s);
}
std::string ckpt_path(const Ctx& ctx, const scoring::Scorer& s, int step) {
  return train_dir(ctx, s) + "/ckpt_" + s.name() + "_" + std::to_string(step);
}

corpus::Corpus require_corpus(const Ctx& ctx) {
  if (!fs::exists(corpus_path(ctx)) || !fs::exists(sidecar_path(ctx))) {
    throw Error(ErrorCode::MissingInput,
                "no corpus under " + ctx.out + "; run gen-corpus first");
  }
  return corpus::load_corpus(corpus_path(ctx), sidecar_path(ctx));
}

encoder::Encoder require_checkpoint(const Ctx& ctx, const scoring::Scorer& s, int step) {
  const std::string path = ckpt_path(ctx, s, step);
  if (!fs::exists(path)) {
    throw Error(ErrorCode::MissingInput, path + " not found; run train first");
  }
  return encoder::load_checkpoint(path);
}

int eval_step(const Ctx& ctx) {
  return ctx.checkpoint_flag >= 0 ? ctx.checkpoint_flag : ctx.cfg.train.steps;
}

struct TierTrips {
  std::vector<training::TokenTriplet> all;
  std::map<std::string, std::vector<training::TokenTriplet>> by_tier;  // "A","B","C"
  corpus::TripletSet set;
};

TierTrips build_tier_trips(const Ctx& ctx, const corpus::Corpus& c) {
  TierTrips t;
  t.set = corpus::build_triplets(c, ctx.cfg.tiers, ctx.cfg.seed);
  t.all = training::materialize(c, t.set);
  for (corpus::Tier tier : {corpus::Tier::A, corpus::Tier::B, corpus::Tier::C}) {
    corpus::TripletSet sub;
    for (const corpus::TieredTriplet& tr : t.set.triplets) {
      if (tr.tier == tier) sub.triplets.push_back(tr);
    }
    t.by_tier[corpus::tier_name(tier)] = training::materialize(c, sub);
  }
  return t;
}

/// Tiers selected by --tier: one of A|B|C, or all three.
std::vector<std::string> selected_tiers(const Ctx& ctx) {
  if (ctx.tier_flag == "all") return {"A", "B", "C"};
  if (ctx.tier_flag == "A" || ctx.tier_flag == "B" || ctx.tier_flag == "C") {
    return {ctx.tier_flag};
  }
  throw Error(ErrorCode::InvalidConfig, "unknown tier '" + ctx.tier_flag + "' (want A|B|C|all)");
}

std::unordered_set<int32_t> punct_set(const corpus::Corpus& c) {
  return {c.vocab.punct_ids().begin(), c.vocab.punct_ids().end()};
}

int cmd_gen_corpus(const Ctx& ctx) {
  fs::create_directories(ctx.out + "/figs");
  const corpus::Corpus c = corpus::generate_corpus(ctx.cfg.corpus);
  corpus::save_corpus(c, corpus_path(ctx), sidecar_path(ctx));
  const TierTrips trips = build_tier_trips(ctx, c);

  std::ostringstream csv;
  csv << meta_line("corpus-triplets", ctx.hash, ctx.cfg.seed, strategy_name(ctx));
  csv << "# shortfall A=" << trips.set.shortfall.at(corpus::Tier::A)
      << " B=" << trips.set.shortfall.at(corpus::Tier::B)
      << " C=" << trips.set.shortfall.at(corpus::Tier::C) << "\n";
  csv << "tier,anchor,positive,negative\n";
  for (const corpus::TieredTriplet& tr : trips.set.triplets) {
    csv << corpus::tier_name(tr.tier) << "," << tr.anchor << "," << tr.positive << ","
        << tr.negative << "\n";
  }
  write_text(ctx.out + "/triplets.csv", csv.str());

  HistGroup pos{"positive", {}};
  HistGroup neg{"negative", {}};
  for (const corpus::TieredTriplet& tr : trips.set.triplets) {
    pos.values.push_back(c.passages[static_cast<size_t>(tr.positive)].length);
    neg.values.push_back(c.passages[static_cast<size_t>(tr.negative)].length);
  }
  write_svg(ctx, "length-hist", ctx.out + "/figs/length_hist.svg",
            svg_histogram("triplet passage lengths", "tokens", {pos, neg}, 12));

  json rep;
  rep["kind"] = "corpus-report";
  rep["version"] = 1;
  rep["config"] = ctx.hash;
  rep["seed"] = ctx.cfg.seed;
  rep["strategy"] = strategy_name(ctx);
  rep["passages"] = c.passages.size();
  rep["vocab"] = c.vocab.size();
  rep["cramers_v"] = corpus::author_domain_cramers_v(c);
  rep["triplets"] = trips.set.triplets.size();
  rep["shortfall"] = {{"A", trips.set.shortfall.at(corpus::Tier::A)},
                      {"B", trips.set.shortfall.at(corpus::Tier::B)},
                      {"C", trips.set.shortfall.at(corpus::Tier::C)}};
  write_text(ctx.out + "/corpus_report.json", rep.dump(2) + "\n");

  std::cout << "corpus: " << c.passages.size() << " passages, vocab " << c.vocab.size()
            << ", cramers_v " << corpus::author_domain_cramers_v(c) << "\n"
            << "triplets: " << trips.set.triplets.size()
            << (trips.set.complete() ? "" : " (with shortfall; see triplets.csv)") << "\n";
  return 0;
}

int cmd_train(const Ctx& ctx) {
  const corpus::Corpus c = require_corpus(ctx);
  const TierTrips trips = build_tier_trips(ctx, c);
  for (const scoring::Scorer& s : selected_scorers(ctx)) {
    const std::string tdir = train_dir(ctx, s);
    const std::string final_ckpt = ckpt_path(ctx, s, ctx.cfg.train.steps);
    const std::string loss_path = tdir + "/loss_" + s.name() + ".csv";
    if (fs::exists(final_ckpt) && fs::exists(loss_path)) {
      std::cout << "train " << flag_from_scorer(s) << ": complete, skipping (delete " << tdir
                << " to retrain)\n";
      continue;
    }
    const training::TrainResult res =
        training::train_run(c, ctx.cfg.encoder, s, trips.all, ctx.cfg.train, tdir);
    // stamp the loss CSV with the experiment identity
    const std::string body = slurp_file(res.loss_csv_path, "train");
    write_text(res.loss_csv_path,
               meta_line("train-loss", ctx.hash, ctx.cfg.seed, strategy_name(ctx)) + body);

    json meta;
    meta["kind"] = "train-meta";
    meta["version"] = 1;
    meta["config"] = ctx.hash;
    meta["seed"] = ctx.cfg.seed;
    meta["strategy"] = strategy_name(ctx);
    meta["scorer"] = flag_from_scorer(s);
    meta["steps"] = ctx.cfg.train.steps;
    meta["checkpoints"] = res.checkpoint_paths;
    write_text(tdir + "/meta.json", meta.dump(2) + "\n");
    std::cout << "train " << flag_from_scorer(s) << ": " << res.curve.size() << " steps, "
              << res.checkpoint_paths.size() << " checkpoints\n";
  }
  return 0;
}

int cmd_eval_rank(const Ctx& ctx) {
  const corpus::Corpus c = require_corpus(ctx);
  const TierTrips trips = build_tier_trips(ctx, c);
  const int step = eval_step(ctx);
  std::ostringstream csv;
  csv << meta_line("rank-eval", ctx.hash, ctx.cfg.seed, strategy_name(ctx));
  csv << "scorer,checkpoint,tier,n,n_plus,accuracy,failure_rate\n";
  csv << std::setprecision(17);
  for (const scoring::Scorer& s : selected_scorers(ctx)) {
    training::Model model(require_checkpoint(ctx, s, step), s, punct_set(c));
    auto add_row = [&](const std::string& tier, const std::vector<training::TokenTriplet>& tt) {
      if (tt.empty()) return;
      const training::RankingEval ev = training::ranking_eval(model, tt);
      csv << flag_from_scorer(s) << "," << step << "," << tier << "," << tt.size() << ","
          << ev.n_plus << "," << ev.accuracy << "," << ev.failure_rate << "\n";
      std::cout << "eval-rank " << flag_from_scorer(s) << " tier " << tier << ": accuracy "
                << ev.accuracy << " (" << ev.n_plus << "/" << tt.size() << ")\n";
    };
    for (const auto& [tier, tt] : trips.by_tier) add_row(tier, tt);
    add_row("all", trips.all);
  }
  write_text(ctx.out + "/rank.csv", csv.str());
  return 0;
}

int cmd_patch(const Ctx& ctx) {
  const corpus::Corpus c = require_corpus(ctx);
  const TierTrips trips = build_tier_trips(ctx, c);
  const encoder::PatchStrategy strat = active_strategy(ctx);
  const int step = eval_step(ctx);
  fs::create_directories(ctx.out + "/figs");
  std::vector<patching::RecoveryCurve> curves;
  for (const scoring::Scorer& s : selected_scorers(ctx)) {
    training::Model model(require_checkpoint(ctx, s, step), s, punct_set(c));
    std::vector<Series> rank_series, pct_series;
    for (const std::string& tier : selected_tiers(ctx)) {
      const auto kept = patching::filter_correct(model, trips.by_tier.at(tier));
      if (kept.empty()) {
        std::cout << "patch " << flag_from_scorer(s) << " tier " << tier
                  << ": no correctly ranked triplets, skipping\n";
        continue;
      }
      const patching::PatchGrid grid =
          patching::run_patch_grid(model, kept, strat, step, tier);
      const patching::RecoveryCurve pct = patching::percent_curve(grid);
      const patching::RecoveryCurve rnk = patching::rank_recovery(grid);
      curves.push_back(pct);
      curves.push_back(rnk);
      Series rs{"tier " + tier, {}, {}};
      Series ps = rs;
      for (size_t l = 0; l < rnk.values.size(); ++l) {
        rs.xs.push_back(static_cast<double>(l));
        rs.ys.push_back(rnk.values[l]);
        ps.xs.push_back(static_cast<double>(l));
        ps.ys.push_back(pct.values[l]);
      }
      rank_series.push_back(rs);
      pct_series.push_back(ps);
      const auto cp = patching::consolidation_point(rnk);
      std::cout << "patch " << flag_from_scorer(s) << " tier " << tier << ": n=" << kept.size()
                << " consolidation "
                << (cp.has_value() ? std::to_string(*cp) : std::string("-")) << "\n";
    }
    if (!rank_series.empty()) {
      const std::string tag = flag_from_scorer(s);
      write_svg(ctx, "rank-recovery-fig", ctx.out + "/figs/rank_" + tag + ".svg",
                svg_line_chart("rank recovery: " + tag, "layer", "rank recovery", rank_series));
      write_svg(ctx, "percent-recovery-fig", ctx.out + "/figs/percent_" + tag + ".svg",
                svg_line_chart("percent recovery: " + tag, "layer", "percent", pct_series));
    }
  }
  if (curves.empty()) {
    throw Error(ErrorCode::TooFewSamples, "patch: no tier produced a grid");
  }
  write_text(ctx.out + "/recovery.csv",
             meta_line("recovery", ctx.hash, ctx.cfg.seed, strategy_name(ctx)) +
                 patching::curves_csv(curves));
  return 0;
}

int cmd_sensitivity(const Ctx& ctx) {
  const corpus::Corpus c = require_corpus(ctx);
  const TierTrips trips = build_tier_trips(ctx, c);
  const encoder::PatchStrategy strat = active_strategy(ctx);
  const int step = eval_step(ctx);
  fs::create_directories(ctx.out + "/figs");
  std::vector<patching::RecoveryCurve> curves;
  std::vector<Series> series;
  const std::vector<training::TokenTriplet>& pool =
      ctx.tier_flag == "all" ? trips.all : trips.by_tier.at(ctx.tier_flag);
  for (const scoring::Scorer& s : selected_scorers(ctx)) {
    training::Model model(require_checkpoint(ctx, s, step), s, punct_set(c));
    const auto kept = patching::filter_correct(model, pool);
    if (kept.empty()) {
      std::cout << "sensitivity " << flag_from_scorer(s) << ": no correctly ranked triplets\n";
      continue;
    }
    const patching::PatchGrid grid =
        patching::run_patch_grid(model, kept, strat, step, ctx.tier_flag);
    patching::RecoveryCurve cur = patching::score_sensitivity(grid);
    Series sr{flag_from_scorer(s), {}, {}};
    for (size_t l = 0; l < cur.values.size(); ++l) {
      sr.xs.push_back(static_cast<double>(l));
      sr.ys.push_back(cur.values[l]);
    }
    series.push_back(sr);
    curves.push_back(std::move(cur));
  }
  if (curves.empty()) {
    throw Error(ErrorCode::TooFewSamples, "sensitivity: no scorer produced a grid");
  }
  write_text(ctx.out + "/sensitivity.csv",
             meta_line("sensitivity", ctx.hash, ctx.cfg.seed, strategy_name(ctx)) +
                 patching::curves_csv(curves));
  write_svg(ctx, "sensitivity-fig", ctx.out + "/figs/sensitivity.svg",
            svg_line_chart("score sensitivity", "layer", "mean |s_patched - s_corrupt|", series));
  return 0;
}

int cmd_dynamics(const Ctx& ctx) {
  const corpus::Corpus c = require_corpus(ctx);
  const TierTrips trips = build_tier_trips(ctx, c);
  const encoder::PatchStrategy strat = active_strategy(ctx);
  fs::create_directories(ctx.out + "/figs");
  const std::vector<training::TokenTriplet>& pool =
      ctx.tier_flag == "all" ? trips.all : trips.by_tier.at(ctx.tier_flag);
  std::vector<patching::RecoveryCurve> all_curves;
  for (const scoring::Scorer& s : selected_scorers(ctx)) {
    std::vector<int> steps;
    if (ctx.checkpoint_flag >= 0) {
      steps = {ctx.checkpoint_flag};
    } else {
      steps = ctx.cfg.train.checkpoint_steps.empty()
                  ? training::default_checkpoint_steps(ctx.cfg.train.steps)
                  : ctx.cfg.train.checkpoint_steps;
    }
    std::vector<patching::CheckpointRef> refs;
    for (int st : steps) {
      const std::string path = ckpt_path(ctx, s, st);
      if (fs::exists(path)) refs.push_back({st, path});
    }
    if (refs.empty()) {
      throw Error(ErrorCode::MissingInput,
                  "no checkpoints for " + flag_from_scorer(s) + " under " + train_dir(ctx, s) +
                      "; run train first");
    }
    std::vector<patching::RecoveryCurve> curves =
        patching::dynamics_sweep(refs, s, pool, strat, punct_set(c));
    for (patching::RecoveryCurve& cu : curves) cu.tier = ctx.tier_flag;
    std::vector<Series> series;
    for (const patching::RecoveryCurve& cu : curves) {
      Series sr{"step " + std::to_string(cu.checkpoint_step), {}, {}};
      for (size_t l = 0; l < cu.values.size(); ++l) {
        sr.xs.push_back(static_cast<double>(l));
        sr.ys.push_back(cu.values[l]);
      }
      series.push_back(sr);
    }
    write_svg(ctx, "dynamics-fig",
              ctx.out + "/figs/dynamics_" + flag_from_scorer(s) + ".svg",
              svg_line_chart("training dynamics: " + flag_from_scorer(s), "layer",
                             "percent recovery", series));
    std::cout << "dynamics " << flag_from_scorer(s) << ": " << refs.size() << " checkpoints\n";
    for (patching::RecoveryCurve& cu : curves) all_curves.push_back(std::move(cu));
  }
  write_text(ctx.out + "/dynamics.csv",
             meta_line("dynamics", ctx.hash, ctx.cfg.seed, strategy_name(ctx)) +
                 patching::curves_csv(all_curves));
  return 0;
}

int cmd_probe(const Ctx& ctx) {
  const corpus::Corpus base = require_corpus(ctx);
  fs::create_directories(ctx.out + "/figs");
  // a fresh probe corpus at the same seed shares the vocabulary; only the
  // passage count changes
  corpus::CorpusConfig pc = ctx.cfg.corpus;
  const int want = ctx.cfg.probe_train + ctx.cfg.probe_test;
  pc.passages_per_set = (want + pc.n_sets - 1) / pc.n_sets;
  const corpus::Corpus probe_corpus = corpus::generate_corpus(pc);
  if (probe_corpus.vocab.size() != base.vocab.size()) {
    throw Error(ErrorCode::InvalidConfig,
                "probe corpus vocabulary differs from the training corpus; "
                "corpus settings must match");
  }
  auto [train_p, test_p] =
      probes::split_passages(probe_corpus, ctx.cfg.probe_train, ctx.cfg.probe_test, ctx.cfg.seed);
  // R^2 is undefined for a feature that is constant on the held-out split;
  // drop those up front instead of failing the whole sweep
  std::vector<probes::StyleFeature> feats;
  for (const probes::StyleFeature& f : probes::default_features()) {
    const double first = probes::extract_feature(test_p.front().text, f);
    bool varies = false;
    for (const corpus::Passage& p : test_p) {
      if (probes::extract_feature(p.text, f) != first) {
        varies = true;
        break;
      }
    }
    if (varies) {
      feats.push_back(f);
    } else {
      std::cout << "probe: skipping " << probes::feature_name(f)
                << " (constant on the test split)\n";
    }
  }
  const int step = eval_step(ctx);

  auto run_one = [&](const encoder::Encoder& enc, const std::string& label) {
    probes::ProbeMatrix m =
        probes::probe_sweep(enc, train_p, test_p, feats, ctx.cfg.probe_lambda);
    m.model = label;
    write_text(ctx.out + "/probe_" + label + ".csv",
               meta_line("probe", ctx.hash, ctx.cfg.seed, strategy_name(ctx)) +
                   probes::probe_csv(m));
    write_svg(ctx, "probe-fig", ctx.out + "/figs/probe_" + label + ".svg",
              svg_heatmap("probe R^2: " + label, m.features, m.r2));
    std::cout << "probe " << label << ": " << m.features.size() << " features x "
              << m.r2.front().size() << " layers\n";
  };

  const std::vector<scoring::Scorer> scorers = selected_scorers(ctx);
  for (const scoring::Scorer& s : scorers) {
    run_one(require_checkpoint(ctx, s, step), flag_from_scorer(s));
  }
  // untrained control: the step-0 checkpoint is identical across scorers
  const std::string init_path = ckpt_path(ctx, scorers.front(), 0);
  if (fs::exists(init_path) && step != 0) {
    run_one(encoder::load_checkpoint(init_path), "init");
  }
  return 0;
}

int cmd_geometry(const Ctx& ctx) {
  const corpus::Corpus c = require_corpus(ctx);
  const TierTrips trips = build_tier_trips(ctx, c);
  const int step = eval_step(ctx);
  std::ostringstream csv;
  csv << meta_line("geometry", ctx.hash, ctx.cfg.seed, strategy_name(ctx));
  csv << "scorer,checkpoint,n_pairs,alignment,uniformity\n";
  csv << std::setprecision(17);
  for (const scoring::Scorer& s : selected_scorers(ctx)) {
    training::Model model(require_checkpoint(ctx, s, step), s, punct_set(c));
    std::vector<std::pair<Tensor, Tensor>> pairs;
    for (const training::TokenTriplet& t : trips.all) {
      pairs.emplace_back(training::passage_embedding(model, t.anchor),
                         training::passage_embedding(model, t.positive));
    }
    const training::GeometryReport rep = training::geometry(pairs);
    csv << flag_from_scorer(s) << "," << step << "," << pairs.size() << "," << rep.alignment
        << "," << rep.uniformity << "\n";
    std::cout << "geometry " << flag_from_scorer(s) << ": alignment " << rep.alignment
              << " uniformity " << rep.uniformity << "\n";
  }
  write_text(ctx.out + "/geometry.csv", csv.str());
  return 0;
}

struct CsvDoc {
  MetaFields meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvDoc read_csv(const std::string& path, const std::string& producer) {
  const std::string text = slurp_file(path, producer);
  CsvDoc doc;
  std::istringstream in(text);
  std::string line;
  bool meta_seen = false, header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (!meta_seen) {
        const auto m = parse_meta_line(line);
        if (!m.has_value()) {
          throw Error(ErrorCode::InvalidConfig, path + ": missing artifact metadata line");
        }
        doc.meta = *m;
        meta_seen = true;
      }
      continue;
    }
    if (!header_seen) {
      doc.header = split(line, ',');
      header_seen = true;
      continue;
    }
    doc.rows.push_back(split(line, ','));
  }
  if (!meta_seen || !header_seen) {
    throw Error(ErrorCode::InvalidConfig, path + ": not a stylolab artifact CSV");
  }
  return doc;
}

size_t col_of(const CsvDoc& doc, const std::string& name, const std::string& path) {
  for (size_t i = 0; i < doc.header.size(); ++i) {
    if (doc.header[i] == name) return i;
  }
  throw Error(ErrorCode::InvalidConfig, path + ": missing column " + name);
}

int cmd_report(const Ctx& ctx) {
  const std::string rank_path = ctx.out + "/rank.csv";
  const std::string rec_path = ctx.out + "/recovery.csv";
  CsvDoc rank = read_csv(rank_path, "eval-rank");
  CsvDoc rec = read_csv(rec_path, "patch");

  std::vector<std::pair<std::string, const MetaFields*>> metas = {{rank_path, &rank.meta},
                                                                  {rec_path, &rec.meta}};
  std::optional<CsvDoc> geo;
  if (fs::exists(ctx.out + "/geometry.csv")) {
    geo = read_csv(ctx.out + "/geometry.csv", "geometry");
    metas.emplace_back(ctx.out + "/geometry.csv", &geo->meta);
  }
  std::vector<std::pair<std::string, CsvDoc>> probe_docs;
  for (const scoring::Scorer& s : ctx.cfg.scorers) {
    const std::string p = ctx.out + "/probe_" + flag_from_scorer(s) + ".csv";
    if (fs::exists(p)) probe_docs.emplace_back(flag_from_scorer(s), read_csv(p, "probe"));
  }
  if (fs::exists(ctx.out + "/probe_init.csv")) {
    probe_docs.emplace_back("init", read_csv(ctx.out + "/probe_init.csv", "probe"));
  }
  for (const auto& [label, doc] : probe_docs) {
    metas.emplace_back(ctx.out + "/probe_" + label + ".csv", &doc.meta);
  }

  for (const auto& [path, m] : metas) {
    if (m->config != ctx.hash || m->seed != ctx.cfg.seed) {
      throw Error(ErrorCode::InvalidConfig,
                  "refusing to mix artifacts: " + path + " was produced with config=" +
                      m->config + " seed=" + std::to_string(m->seed) + ", expected config=" +
                      ctx.hash + " seed=" + std::to_string(ctx.cfg.seed));
    }
  }
  if (rec.meta.strategy != strategy_name(ctx)) {
    throw Error(ErrorCode::InvalidConfig,
                "refusing to mix artifacts: recovery.csv used strategy " + rec.meta.strategy +
                    ", expected " + strategy_name(ctx));
  }

  std::ostringstream txt, mcsv;
  txt << meta_line("report", ctx.hash, ctx.cfg.seed, strategy_name(ctx));
  mcsv << meta_line("report", ctx.hash, ctx.cfg.seed, strategy_name(ctx));
  mcsv << "section,scorer,axis,key,value\n";
  mcsv << std::setprecision(17);

  txt << "\n== Ranking ==\n";
  txt << "scorer  tier  n     n_plus  accuracy  failure_rate\n";
  {
    const size_t cs = col_of(rank, "scorer", rank_path), ct = col_of(rank, "tier", rank_path),
                 cn = col_of(rank, "n", rank_path), cp = col_of(rank, "n_plus", rank_path),
                 ca = col_of(rank, "accuracy", rank_path),
                 cf = col_of(rank, "failure_rate", rank_path);
    for (const auto& row : rank.rows) {
      txt << std::left << std::setw(8) << row[cs] << std::setw(6) << row[ct] << std::setw(6)
          << row[cn] << std::setw(8) << row[cp] << std::setw(10)
          << fmt_g(std::stod(row[ca])) << fmt_g(std::stod(row[cf])) << "\n";
      mcsv << "ranking," << row[cs] << "," << row[ct] << ",n," << row[cn] << "\n";
      mcsv << "ranking," << row[cs] << "," << row[ct] << ",n_plus," << row[cp] << "\n";
      mcsv << "ranking," << row[cs] << "," << row[ct] << ",accuracy," << row[ca] << "\n";
      mcsv << "ranking," << row[cs] << "," << row[ct] << ",failure_rate," << row[cf] << "\n";
    }
  }

  txt << "\n== Consolidation points (rank recovery > 0.75) ==\n";
  txt << "scorer       tier  layer  n_effective\n";
  {
    const size_t cs = col_of(rec, "scorer", rec_path), ct = col_of(rec, "tier", rec_path),
                 cl = col_of(rec, "layer", rec_path), cm = col_of(rec, "metric", rec_path),
                 cv = col_of(rec, "value", rec_path), cn = col_of(rec, "n_effective", rec_path);
    std::map<std::pair<std::string, std::string>, patching::RecoveryCurve> by_key;
    std::map<std::pair<std::string, std::string>, int64_t> n_eff;
    for (const auto& row : rec.rows) {
      if (row[cm] != "rank") continue;
      const auto key = std::make_pair(row[cs], row[ct]);
      patching::RecoveryCurve& cu = by_key[key];
      cu.metric = patching::Metric::Rank;
      const size_t layer = static_cast<size_t>(std::stoul(row[cl]));
      if (cu.values.size() <= layer) cu.values.resize(layer + 1, 0.0);
      cu.values[layer] = std::stod(row[cv]);
      n_eff[key] = std::stoll(row[cn]);
    }
    // scorer flag then tier; the map on (scorer, tier) already sorts that way
    for (const auto& [key, cu] : by_key) {
      const auto cp = patching::consolidation_point(cu);
      const std::string layer = cp.has_value() ? std::to_string(*cp) : "-";
      txt << std::left << std::setw(8) << key.first << std::setw(6) << key.second << std::setw(7)
          << layer << n_eff[key] << "\n";
      mcsv << "consolidation," << key.first << "," << key.second << ",layer," << layer << "\n";
      mcsv << "consolidation," << key.first << "," << key.second << ",n_effective,"
           << n_eff[key] << "\n";
    }
  }

  if (!probe_docs.empty()) {
    std::vector<probes::ProbeMatrix> mats;
    for (const auto& [label, doc] : probe_docs) {
      probes::ProbeMatrix m;
      m.model = label;
      const std::string ppath = ctx.out + "/probe_" + label + ".csv";
      const size_t cf = col_of(doc, "feature", ppath), cl = col_of(doc, "layer", ppath),
                   cr = col_of(doc, "r2", ppath);
      std::map<std::string, size_t> row_of;
      for (const auto& row : doc.rows) {
        if (row_of.find(row[cf]) == row_of.end()) {
          row_of[row[cf]] = m.features.size();
          m.features.push_back(row[cf]);
          m.r2.emplace_back();
        }
        auto& vals = m.r2[row_of[row[cf]]];
        const size_t layer = static_cast<size_t>(std::stoul(row[cl]));
        if (vals.size() <= layer) vals.resize(layer + 1, 0.0);
        vals[layer] = std::stod(row[cr]);
      }
      mats.push_back(std::move(m));
    }
    txt << "\n== Probe peaks (peak R^2 per feature) ==\n";
    txt << "feature          ";
    for (const auto& m : mats) txt << std::left << std::setw(16) << m.model;
    txt << "\n";
    for (size_t f = 0; f < mats.front().features.size(); ++f) {
      txt << std::left << std::setw(17) << mats.front().features[f];
      for (const auto& m : mats) {
        if (f >= m.r2.size()) {
          txt << std::setw(16) << "-";
          continue;
        }
        double best = m.r2[f].empty() ? 0.0 : m.r2[f][0];
        size_t best_l = 0;
        for (size_t l = 1; l < m.r2[f].size(); ++l) {
          if (m.r2[f][l] > best) {
            best = m.r2[f][l];
            best_l = l;
          }
        }
        std::ostringstream cell;
        cell << fmt_g(best) << "@" << best_l;
        txt << std::setw(16) << cell.str();
        mcsv << "probe_peak," << m.model << "," << mats.front().features[f] << ",r2," << best
             << "\n";
        mcsv << "probe_peak," << m.model << "," << mats.front().features[f] << ",layer,"
             << best_l << "\n";
      }
      txt << "\n";
    }
    if (mats.size() >= 2) {
      const probes::ProbeCompareReport cmp = probes::probe_compare(mats);
      double worst = 0.0;
      size_t wf = 0, wl = 0;
      for (size_t f = 0; f < cmp.max_abs_diff.size(); ++f) {
        for (size_t l = 0; l < cmp.max_abs_diff[f].size(); ++l) {
          if (cmp.max_abs_diff[f][l] > worst) {
            worst = cmp.max_abs_diff[f][l];
            wf = f;
            wl = l;
          }
        }
      }
      txt << "max cross-model R^2 spread: " << fmt_g(worst) << " (" << cmp.features[wf]
          << ", layer " << wl << ")\n";
      mcsv << "probe_divergence,all," << cmp.features[wf] << ",max_abs_diff," << worst << "\n";
    }
  }

  if (geo.has_value()) {
    txt << "\n== Geometry ==\n";
    txt << "scorer  alignment  uniformity\n";
    const std::string gpath = ctx.out + "/geometry.csv";
    const size_t cs = col_of(*geo, "scorer", gpath), ca = col_of(*geo, "alignment", gpath),
                 cu = col_of(*geo, "uniformity", gpath);
    for (const auto& row : geo->rows) {
      txt << std::left << std::setw(8) << row[cs] << std::setw(11)
          << fmt_g(std::stod(row[ca])) << fmt_g(std::stod(row[cu])) << "\n";
      mcsv << "geometry," << row[cs] << ",all,alignment," << row[ca] << "\n";
      mcsv << "geometry," << row[cs] << ",all,uniformity," << row[cu] << "\n";
    }
  }

  write_text(ctx.out + "/report.txt", txt.str());
  write_text(ctx.out + "/report.csv", mcsv.str());
  std::cout << txt.str();
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"stylolab: contrastive stylometry laboratory"};
  app.require_subcommand(1);

  std::string config_path = "experiment.ini";
  std::string out_override, scorer_flag, strategy_flag, tier_flag = "all";
  int64_t seed_override = -1;
  int checkpoint_flag = -1;
  app.add_option("--config", config_path, "experiment config file (INI)");
  app.add_option("--seed", seed_override, "override the experiment seed");
  app.add_option("--out", out_override, "override the output directory");

  const std::vector<std::string> names = {"gen-corpus", "train",    "eval-rank",
                                          "patch",      "sensitivity", "dynamics",
                                          "probe",      "geometry", "report"};
  const std::vector<std::string> descs = {
      "generate the corpus, triplets, and length histogram",
      "contrastive training per scorer with checkpoints",
      "triplet ranking accuracy per tier",
      "residual-stream patching recovery curves",
      "score sensitivity per layer",
      "recovery curves across training checkpoints",
      "linear stylometric probes per layer",
      "embedding alignment and uniformity",
      "assemble the cross-model summary"};
  std::map<std::string, CLI::App*> subs;
  for (size_t i = 0; i < names.size(); ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descs[i]);
    sub->fallthrough();  // --config/--seed/--out may follow the subcommand
    if (names[i] != "gen-corpus" && names[i] != "report") {
      sub->add_option("--scorer", scorer_flag, "restrict to one scorer (mean|li|pli)");
    }
    if (names[i] == "patch" || names[i] == "sensitivity" || names[i] == "dynamics") {
      sub->add_option("--strategy", strategy_flag,
                      "patch strategy (full-stream|layer-delta|positions)");
      sub->add_option("--tier", tier_flag, "triplet tier (A|B|C|all)");
    }
    if (names[i] != "gen-corpus" && names[i] != "train" && names[i] != "report") {
      sub->add_option("--checkpoint", checkpoint_flag, "checkpoint step (default: final)");
    }
    subs[names[i]] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  Ctx ctx;
  try {
    // a bad or missing config file is an invocation problem, not a data one
    ctx.cfg = load_config(config_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  try {
    if (seed_override >= 0) {
      ctx.cfg.seed = static_cast<uint64_t>(seed_override);
      ctx.cfg.corpus.seed = ctx.cfg.seed;
      ctx.cfg.encoder.seed = ctx.cfg.seed;
      ctx.cfg.train.seed = ctx.cfg.seed;
    }
    if (!out_override.empty()) ctx.cfg.out_dir = out_override;
    ctx.hash = config_hash(ctx.cfg);
    ctx.out = ctx.cfg.out_dir;
    ctx.scorer_flag = scorer_flag;
    ctx.strategy_flag = strategy_flag;
    ctx.tier_flag = tier_flag;
    ctx.checkpoint_flag = checkpoint_flag;
    fs::create_directories(ctx.out);

    if (subs["gen-corpus"]->parsed()) return cmd_gen_corpus(ctx);
    if (subs["train"]->parsed()) return cmd_train(ctx);
    if (subs["eval-rank"]->parsed()) return cmd_eval_rank(ctx);
    if (subs["patch"]->parsed()) return cmd_patch(ctx);
    if (subs["sensitivity"]->parsed()) return cmd_sensitivity(ctx);
    if (subs["dynamics"]->parsed()) return cmd_dynamics(ctx);
    if (subs["probe"]->parsed()) return cmd_probe(ctx);
    if (subs["geometry"]->parsed()) return cmd_geometry(ctx);
    if (subs["report"]->parsed()) return cmd_report(ctx);
    std::cerr << "no subcommand selected\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace stylolab::cli
