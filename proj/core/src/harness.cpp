#include "repcl/harness.hpp"

#include "repcl/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace repcl {

Corpus load_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset == "synthetic") return make_synthetic_corpus(cfg.synthetic, cfg.synthetic_seed);
  return load_corpus(cfg.dataset);
}

std::vector<std::uint64_t> run_seeds(const ExperimentConfig& cfg) {
  std::vector<std::uint64_t> s;
  for (int i = 0; i < cfg.seeds; ++i) s.push_back(cfg.base_seed + static_cast<std::uint64_t>(i));
  return s;
}

EncoderConfig encoder_for(const ExperimentConfig& cfg, const Corpus& corpus) {
  EncoderConfig e = cfg.encoder;
  e.vocab_size = corpus.vocab.size();
  return e;
}

nlohmann::json Task1Diagnostics::to_json() const {
  nlohmann::json j = {{"eigenvalues", spectrum.eigenvalues},
                      {"top_k", spectrum.top_k},
                      {"top_sum", spectrum.top_sum(spectrum.top_k)},
                      {"total_variance", spectrum.total_variance}};
  if (mi_zzplus) j["mi_z_zplus"] = diagnostics_json(MiMode::ZZPlus, *mi_zzplus);
  return j;
}

Task1Diagnostics task1_diagnostics(Model& model, const TaskStream& stream, const DiagnosticsConfig& cfg,
                                   std::uint64_t seed, bool with_mi) {
  const auto& test = stream.tasks.at(0).test;
  Task1Diagnostics d;
  d.spectrum = eig_spectrum(model.representations(test), cfg.top_k);
  if (with_mi) {
    Rng rng = make_rng(seed, 0x1D1A);
    d.mi_zzplus = estimate_task_mi(model, test, MiMode::ZZPlus, TaskMiOptions{cfg.mine, cfg.min_pairs}, rng);
  }
  return d;
}

RunOutcome run_experiment(const ExperimentConfig& base, const Corpus& corpus, const std::string& variant,
                          std::uint64_t seed) {
  ExperimentConfig cfg = base;
  apply_variant(cfg.train, variant);
  cfg.validate();
  TaskStream stream = split_tasks(corpus, cfg.num_tasks, cfg.classes_per_task, seed);
  const EncoderConfig enc = encoder_for(cfg, corpus);

  std::optional<Model> task1;
  std::optional<Task1Diagnostics> diag;
  ContinualRunState state = run_continual(stream, enc, cfg.train, seed, [&](int j, ContinualRunState& s) {
    if (j != 1) return;
    task1 = s.model;
    if (cfg.diagnostics.task1) diag = task1_diagnostics(s.model, stream, cfg.diagnostics, seed, true);
  });

  nlohmann::json report = run_report(state, seed);
  report["variant"] = variant;
  report["config"] = cfg.to_json();
  report["config_hash"] = cfg.hash();
  report["dataset"] = cfg.dataset;
  report["stream"] = stream_manifest(stream);
  if (diag) report["task1_diagnostics"] = diag->to_json();
  return RunOutcome{std::move(state), std::move(task1), std::move(stream), std::move(report)};
}

nlohmann::json run_checkpoint_json(const Model& model, std::span<const int> class_order, std::uint64_t seed) {
  nlohmann::json j = checkpoint_json(model, class_order);
  j["seed"] = seed;
  return j;
}

void write_run_outputs(const RunOutcome& run, const std::filesystem::path& dir, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const std::string s = std::to_string(seed);
  write_json(dir / ("report_seed" + s + ".json"), run.report);
  write_text(dir / ("accuracy_seed" + s + ".csv"), run.state.accuracy.to_csv());
  write_json(dir / ("bank_seed" + s + ".json"), run.state.bank.to_json());
  write_json(dir / ("stream_seed" + s + ".json"), stream_manifest(run.stream));
  write_json(dir / ("checkpoint_seed" + s + ".json"), run_checkpoint_json(run.state.model, run.state.class_order, seed));
  if (run.task1_model) {
    const auto& t1 = run.stream.tasks.at(0).label_set;
    write_json(dir / ("checkpoint_task1_seed" + s + ".json"), run_checkpoint_json(*run.task1_model, t1, seed));
  }
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double stdev(std::span<const double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

nlohmann::json aggregate_reports(const std::vector<nlohmann::json>& reports) {
  if (reports.empty()) throw InputError("nothing to aggregate");
  const std::string hash = reports.front().at("config_hash").get<std::string>();
  for (const auto& r : reports)
    if (r.at("config_hash").get<std::string>() != hash)
      throw ConfigError("refusing to aggregate reports with different config hashes");

  const std::size_t stages = reports.front().at("acc_per_stage").size();
  nlohmann::json acc_mean = nlohmann::json::array(), acc_sd = nlohmann::json::array();
  for (std::size_t k = 0; k < stages; ++k) {
    std::vector<double> v;
    for (const auto& r : reports) {
      const auto& a = r.at("acc_per_stage");
      if (a.size() != stages) throw ValidationError("reports disagree on the number of stages");
      v.push_back(a[k].get<double>());
    }
    acc_mean.push_back(mean(v));
    acc_sd.push_back(stdev(v));
  }
  std::vector<double> finals, frs;
  nlohmann::json seeds = nlohmann::json::array();
  bool fr_defined = true;
  for (const auto& r : reports) {
    seeds.push_back(r.at("seed"));
    finals.push_back(r.at("final_acc").get<double>());
    if (r.at("fr").is_null())
      fr_defined = false;
    else
      frs.push_back(r.at("fr").get<double>());
  }
  auto num_or_null = [](bool ok, double x) { return ok ? nlohmann::json(x) : nlohmann::json(nullptr); };
  return {
      {"config_hash", hash},
      {"variant", reports.front().value("variant", "full")},
      {"runs", reports.size()},
      {"seeds", seeds},
      {"acc_per_stage_mean", acc_mean},
      {"acc_per_stage_stdev", acc_sd},
      {"final_acc_mean", mean(finals)},
      {"final_acc_stdev", stdev(finals)},
      {"fr_mean", num_or_null(fr_defined, fr_defined ? mean(frs) : 0.0)},
      {"fr_stdev", num_or_null(fr_defined, fr_defined ? stdev(frs) : 0.0)},
  };
}

nlohmann::json paired_deltas(const std::vector<nlohmann::json>& a, const std::vector<nlohmann::json>& b,
                             const std::string& field) {
  std::map<std::uint64_t, double> bv;
  for (const auto& r : b)
    if (!r.at(field).is_null()) bv[r.at("seed").get<std::uint64_t>()] = r.at(field).get<double>();
  nlohmann::json per_seed = nlohmann::json::object();
  std::vector<double> d;
  for (const auto& r : a) {
    const auto seed = r.at("seed").get<std::uint64_t>();
    const auto it = bv.find(seed);
    if (it == bv.end() || r.at(field).is_null()) continue;
    d.push_back(r.at(field).get<double>() - it->second);
    per_seed[std::to_string(seed)] = d.back();
  }
  return {{"field", field}, {"per_seed", per_seed}, {"pairs", d.size()},
          {"mean", d.empty() ? nlohmann::json(nullptr) : nlohmann::json(mean(d))}};
}

// Plotting ---------------------------------------------------------------------

namespace {

constexpr double kW = 640, kH = 400, kL = 70, kR = 160, kT = 40, kB = 55;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kL + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * (kW - kL - kR); }
  double py(double y) const { return kH - kB - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * (kH - kT - kB); }
};

void axes(std::ostringstream& o, const Frame& f, const std::string& title, const std::string& xl, const std::string& yl,
          bool x_ticks) {
  o << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">)", kW, kH)
    << "\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << fmt::format(R"(<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>)", kW / 2, esc(title)) << '\n';
  o << fmt::format(R"(<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/>)", kL, kH - kB, kW - kR) << '\n';
  o << fmt::format(R"(<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/>)", kL, kT, kH - kB) << '\n';
  for (int i = 0; i <= 4; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    o << fmt::format(R"(<text x="{}" y="{:.1f}" text-anchor="end">{:.3g}</text>)", kL - 6, f.py(y) + 4, y) << '\n';
    if (x_ticks) {
      const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
      o << fmt::format(R"(<text x="{:.1f}" y="{}" text-anchor="middle">{:.3g}</text>)", f.px(x), kH - kB + 16, x) << '\n';
    }
  }
  o << fmt::format(R"(<text x="{}" y="{}" text-anchor="middle">{}</text>)", (kL + kW - kR) / 2, kH - 12, esc(xl)) << '\n';
  o << fmt::format(R"svg(<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>)svg",
                   (kT + kH - kB) / 2, (kT + kH - kB) / 2, esc(yl))
    << '\n';
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
  Frame f{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const Series& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("series x and y differ in length");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      f.x0 = std::min(f.x0, s.x[i]);
      f.x1 = std::max(f.x1, s.x[i]);
      f.y0 = std::min(f.y0, s.y[i]);
      f.y1 = std::max(f.y1, s.y[i]);
    }
  }
  if (!std::isfinite(f.x0)) f = {0, 1, 0, 1};
  if (f.y0 > 0.0 && f.y0 < 0.5 * f.y1) f.y0 = 0.0;
  std::ostringstream o;
  axes(o, f, title, x_label, y_label, true);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i])) pts += fmt::format("{:.1f},{:.1f} ", f.px(s.x[i]), f.py(s.y[i]));
    o << fmt::format(R"(<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>)", color, pts) << '\n';
    const double ly = kT + 16.0 * static_cast<double>(k);
    o << fmt::format(R"(<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{3}" stroke-width="2"/>)", kW - kR + 10, ly,
                     kW - kR + 30, color)
      << fmt::format(R"(<text x="{}" y="{}">{}</text>)", kW - kR + 35, ly + 4, esc(s.name)) << '\n';
  }
  o << "</svg>\n";
  return o.str();
}

std::string svg_bar_chart(const std::string& title, const std::string& y_label, const std::vector<std::string>& labels,
                          const std::vector<double>& values) {
  if (labels.size() != values.size()) throw ShapeError("bar labels and values differ in length");
  Frame f{0.0, static_cast<double>(std::max<std::size_t>(values.size(), 1)), 0.0, 0.0};
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    f.y0 = std::min(f.y0, v);
    f.y1 = std::max(f.y1, v);
  }
  if (f.y1 <= f.y0) f.y1 = f.y0 + 1.0;
  std::ostringstream o;
  axes(o, f, title, "", y_label, false);
  const double slot = (kW - kL - kR) / f.x1;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::isfinite(values[i]) ? values[i] : 0.0;
    const double top = f.py(std::max(v, 0.0));
    const double bottom = f.py(std::min(v, 0.0));
    const double x = kL + slot * static_cast<double>(i) + slot * 0.15;
    o << fmt::format(R"(<rect x="{:.1f}" y="{:.1f}" width="{:.1f}" height="{:.1f}" fill="{}"/>)", x, top, slot * 0.7,
                     bottom - top, kPalette[i % std::size(kPalette)])
      << '\n';
    o << fmt::format(R"svg(<text x="{:.1f}" y="{}" text-anchor="end" font-size="10" transform="rotate(-45 {:.1f} {})">{}</text>)svg",
                     x + slot * 0.35, kH - kB + 12, x + slot * 0.35, kH - kB + 12, esc(labels[i]))
      << '\n';
  }
  o << "</svg>\n";
  return o.str();
}

namespace {

std::string flat_name(const std::filesystem::path& rel) {
  std::string s = rel.parent_path().string();
  std::replace(s.begin(), s.end(), '/', '_');
  std::string stem = rel.stem().string();
  return s.empty() ? stem : s + "_" + stem;
}

std::vector<double> iota_x(std::size_t n, double start) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = start + static_cast<double>(i);
  return x;
}

}  // namespace

std::vector<std::filesystem::path> render_plots(const std::filesystem::path& in, const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(in)) throw ConfigError("reports directory does not exist: " + in.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(in))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  fs::create_directories(out);

  std::vector<fs::path> written;
  std::vector<std::string> fr_labels;
  std::vector<double> fr_values;
  auto emit = [&](const std::string& name, const std::string& svg) {
    const fs::path p = out / (name + ".svg");
    write_text(p, svg);
    written.push_back(p);
  };

  for (const fs::path& f : files) {
    const std::string fname = f.filename().string();
    const fs::path rel = fs::relative(f, in);
    if (f.extension() == ".json" && fname.rfind("report", 0) == 0) {
      const nlohmann::json r = read_json(f);
      const auto acc = r.at("acc_per_stage").get<std::vector<double>>();
      std::vector<double> pct;
      for (double a : acc) pct.push_back(100.0 * a);
      emit(flat_name(rel) + "_acc", svg_line_chart("Accuracy on all observed classes: " + rel.string(), "task",
                                                   "accuracy (%)", {Series{r.value("variant", "run"), iota_x(acc.size(), 1.0), pct}}));
      if (!r.at("fr").is_null()) {
        fr_labels.push_back(flat_name(rel));
        fr_values.push_back(r.at("fr").get<double>());
      }
      if (r.contains("task1_diagnostics")) {
        const auto& d = r.at("task1_diagnostics");
        const auto ev = d.at("eigenvalues").get<std::vector<double>>();
        emit(flat_name(rel) + "_task1_spectrum",
             svg_line_chart("Task-1 eigenvalues: " + rel.string(), "rank", "eigenvalue", {Series{"eigenvalue", iota_x(ev.size(), 1.0), ev}}));
        if (d.contains("mi_z_zplus")) {
          const auto c = d.at("mi_z_zplus").at("curve").get<std::vector<double>>();
          emit(flat_name(rel) + "_task1_mine",
               svg_line_chart("MINE fitting curve: " + rel.string(), "epoch", "estimate (nats)", {Series{"z_zplus", iota_x(c.size(), 1.0), c}}));
        }
      }
    } else if (f.extension() == ".json" && fname.rfind("diagnostics", 0) == 0) {
      const nlohmann::json d = read_json(f);
      std::vector<Series> series;
      if (d.contains("mi") && d.at("mi").is_array()) {
        for (const auto& m : d.at("mi")) {
          const auto c = m.at("curve").get<std::vector<double>>();
          series.push_back(Series{m.at("mode").get<std::string>(), iota_x(c.size(), 1.0), c});
        }
      } else if (d.contains("curve")) {
        const auto c = d.at("curve").get<std::vector<double>>();
        series.push_back(Series{d.value("mode", "mi"), iota_x(c.size(), 1.0), c});
      }
      if (!series.empty()) emit(flat_name(rel) + "_mine", svg_line_chart("MINE fitting curves", "epoch", "estimate (nats)", series));
    } else if (f.extension() == ".csv" && fname.rfind("spectrum", 0) == 0) {
      std::ifstream s(f);
      std::string line;
      std::getline(s, line);
      std::vector<double> x, y;
      while (std::getline(s, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        x.push_back(std::stod(line.substr(0, comma)));
        y.push_back(std::stod(line.substr(comma + 1)));
      }
      emit(flat_name(rel), svg_line_chart("Eigenvalues of representations", "rank", "eigenvalue", {Series{"eigenvalue", x, y}}));
    }
  }
  if (!fr_values.empty()) emit("forgetting_rate", svg_bar_chart("Forgetting rate", "FR", fr_labels, fr_values));
  return written;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace repcl
