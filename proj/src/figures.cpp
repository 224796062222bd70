#include "milens/figures.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "milens/error.hpp"
#include "milens/metrics.hpp"
#include "milens/registry.hpp"
#include "milens/svg.hpp"

namespace milens {

namespace {

namespace fs = std::filesystem;

struct SeriesSelect {
  std::string label;
  std::map<std::string, std::string> require;  // config key -> value
  std::string metric;
  std::string split;
};

struct FigureDef {
  std::string title, x_label, y_label;
  std::vector<SeriesSelect> series;
  bool log_y = false;
  bool true_mi_line = false;
};

std::string describe(const SeriesSelect& sel) {
  std::string out = sel.label + " {";
  bool first = true;
  for (const auto& [key, value] : sel.require) {
    if (!first) out += ", ";
    out += key + "=" + value;
    first = false;
  }
  return out + "}";
}

FigureDef figure_def(const std::string& id) {
  FigureDef def;
  def.x_label = "iteration";
  auto flow_max = [](const std::string& estimator) {
    return std::map<std::string, std::string>{{"objective.kind", "maximize"},
                                              {"encoder.view1", "realnvp"},
                                              {"estimator.kind", estimator}};
  };
  auto skip_noise = [](const std::string& estimator) {
    return std::map<std::string, std::string>{{"objective.kind", "maximize"},
                                              {"encoder.view1", "skip_mlp"},
                                              {"noise.enabled", "true"},
                                              {"estimator.kind", estimator}};
  };
  if (id == "1a") {
    def.title = "Invertible-flow maximization: estimator value";
    def.y_label = "I_EST (test)";
    def.series = {{"infonce", flow_max("infonce"), "i_est", "test"},
                  {"nwj", flow_max("nwj"), "i_est", "test"}};
  } else if (id == "1b") {
    def.title = "Invertible-flow maximization: downstream accuracy";
    def.y_label = "probe accuracy (test)";
    def.series = {{"infonce", flow_max("infonce"), "probe_accuracy", "test"},
                  {"nwj", flow_max("nwj"), "probe_accuracy", "test"}};
  } else if (id == "1c") {
    def.title = "Adversarial invertible encoder";
    def.y_label = "separately trained probe";
    def.series = {{"probe log-loss",
                   {{"objective.kind", "adversarial"}},
                   "probe_log_loss",
                   "test"},
                  {"probe accuracy",
                   {{"objective.kind", "adversarial"}},
                   "probe_accuracy",
                   "test"}};
  } else if (id == "2a") {
    def.title = "Skip-MLP with coupled noise: estimator value";
    def.y_label = "I_EST (test)";
    def.series = {{"infonce", skip_noise("infonce"), "i_est", "test"}};
  } else if (id == "2b") {
    def.title = "Skip-MLP with coupled noise: downstream accuracy";
    def.y_label = "probe accuracy (test)";
    def.series = {{"infonce", skip_noise("infonce"), "probe_accuracy", "test"}};
  } else if (id == "2" || id == "2c") {
    def.title = "Skip-MLP with coupled noise: Jacobian conditioning";
    def.y_label = "condition number percentiles";
    def.log_y = true;
    for (const char* p : {"cond_p0", "cond_p20", "cond_p40", "cond_p60", "cond_p80", "cond_p100"})
      def.series.push_back({p, skip_noise("infonce"), p, "train"});
  } else if (id == "3" || id == "3a" || id == "3b" || id == "3c") {
    const bool nwj = id == "3b" || id == "3c";
    const std::string metric = id == "3c" ? "i_est" : "probe_accuracy";
    const std::string split = id == "3c" ? "test" : "test";
    def.title = std::string("Critic ablation (") + (nwj ? "nwj" : "infonce") + ")";
    def.y_label = id == "3c" ? "I_NWJ (test)" : "probe accuracy (test)";
    for (const char* critic : {"bilinear", "separable", "concat_mlp"})
      def.series.push_back({critic,
                            {{"objective.kind", "maximize"},
                             {"encoder.view1", "mlp"},
                             {"critic.kind", critic},
                             {"estimator.kind", nwj ? "nwj" : "infonce"}},
                            metric,
                            split});
  } else if (id == "4a" || id == "4b") {
    const std::string estimator = id == "4a" ? "infonce" : "nwj";
    def.title = "Target matching (" + estimator + "): architecture effect";
    def.y_label = "probe accuracy (test)";
    for (const char* encoder : {"mlp", "convnet"})
      for (const char* target : {"2", "4"})
        def.series.push_back({std::string(encoder) + " t=" + target,
                              {{"objective.kind", "target"},
                               {"encoder.view1", encoder},
                               {"estimator.kind", estimator},
                               {"objective.target", target}},
                              "probe_accuracy",
                              "test"});
  } else if (id == "4c") {
    def.title = "Estimating MI from i.i.d. and non-i.i.d. samples";
    def.y_label = "I_EST (smoothed)";
    def.true_mi_line = true;
    for (const char* estimator : {"infonce", "nwj"})
      for (const char* mode : {"iid", "shared_z"})
        def.series.push_back({std::string(estimator) + " " + mode,
                              {{"experiment.kind", "gauss_bias"},
                               {"estimator.kind", estimator},
                               {"gauss.mode", mode}},
                              "i_est_smoothed",
                              "train"});
  } else {
    throw ConfigError("figure: unknown id '" + id + "'");
  }
  return def;
}

bool record_matches(const RunRecord& record, const std::map<std::string, std::string>& require) {
  if (record.status != "ok") return false;
  for (const auto& [key, value] : require) {
    const auto it = record.config.find(key);
    if (it == record.config.end()) return false;
    if (key == "objective.target") {
      // numeric compare: "2" should match "2.0000...".
      if (std::fabs(std::stod(it->second) - std::stod(value)) > 1e-12) return false;
    } else if (it->second != value) {
      return false;
    }
  }
  return true;
}

}  // namespace

std::vector<std::string> known_figure_ids() {
  return {"1a", "1b", "1c", "2", "2a", "2b", "2c", "3", "3a", "3b", "3c", "4a", "4b", "4c"};
}

std::string render_figure(const std::string& figure_id, const std::string& runs_glob) {
  const FigureDef def = figure_def(figure_id);
  const auto record_paths = find_run_records(runs_glob);
  std::vector<RunRecord> records;
  for (const auto& path : record_paths) records.push_back(read_run_record(path));

  PlotSpec plot;
  plot.title = def.title;
  plot.x_label = def.x_label;
  plot.y_label = def.y_label;
  plot.log_y = def.log_y;

  std::vector<std::string> missing;
  double true_mi = std::nan("");
  for (const auto& sel : def.series) {
    // Collect (iteration -> values across seeds).
    std::map<int64_t, std::vector<double>> by_iteration;
    for (size_t r = 0; r < records.size(); ++r) {
      if (!record_matches(records[r], sel.require)) continue;
      const fs::path dir = fs::path(record_paths[r]).parent_path();
      for (const auto& row : read_metrics_csv((dir / "metrics.csv").string())) {
        if (row.metric == sel.metric && row.split == sel.split)
          by_iteration[row.iteration].push_back(row.value);
        if (def.true_mi_line && row.metric == "true_mi") true_mi = row.value;
      }
    }
    if (by_iteration.empty()) {
      missing.push_back(describe(sel));
      continue;
    }
    PlotSeries series;
    series.label = sel.label;
    for (const auto& [iteration, values] : by_iteration) {
      series.xs.push_back(static_cast<double>(iteration));
      double sum = 0.0, lo = values.front(), hi = values.front();
      for (double v : values) {
        sum += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      series.ys.push_back(sum / static_cast<double>(values.size()));
      series.band_lo.push_back(lo);
      series.band_hi.push_back(hi);
    }
    plot.series.push_back(std::move(series));
  }

  if (plot.series.empty()) {
    std::string msg = "figure " + figure_id + ": no matching runs under '" + runs_glob +
                      "'; expected runs matching:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }
  if (def.true_mi_line && std::isfinite(true_mi)) plot.hlines.push_back({"true MI", true_mi});
  return render_svg_plot(plot);
}

}  // namespace milens
