// SPDX-License-Identifier: Apache-2.0
#include "geoftscp/cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "geoftscp/simstudy.hpp"

namespace geoftscp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::ConfigError:
    case Errc::MissingRows:
    case Errc::OrderViolation:
    case Errc::GridNotUniform:
    case Errc::NonFiniteValue:
    case Errc::DuplicateLocation:
    case Errc::PointOutOfRange:
    case Errc::DomainMismatch:
    case Errc::IndexOutOfRange:
    case Errc::HypothesisMismatch:
    case Errc::IoError:
      return 2;
    default:
      return 3;
  }
}

// Accumulates outputs under temporary names; commit renames everything at
// once so failures leave no partial files behind.
class AtomicOutputs {
 public:
  ~AtomicOutputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : staged_) fs::remove(p, ec);
  }

  fs::path stage(const fs::path& final_path) {
    fs::create_directories(final_path.parent_path());
    fs::path tmp = final_path;
    tmp += ".tmp";
    staged_.push_back(tmp);
    finals_.push_back(final_path);
    return tmp;
  }

  void commit() {
    for (std::size_t i = 0; i < staged_.size(); ++i) fs::rename(staged_[i], finals_[i]);
    committed_ = true;
  }

 private:
  std::vector<fs::path> staged_;
  std::vector<fs::path> finals_;
  bool committed_ = false;
};

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot read " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, path.string() + ": " + e.what());
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& ctx) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* key : allowed)
      if (item.key() == key) {
        ok = true;
        break;
      }
    if (!ok) fail(Errc::ConfigError, ctx + ": unknown key '" + item.key() + "'");
  }
}

double get_number(const json& j, const std::string& ctx) {
  if (!j.is_number()) fail(Errc::ConfigError, ctx + ": expected a number");
  return j.get<double>();
}

int get_int(const json& j, const std::string& ctx) {
  if (!j.is_number_integer()) fail(Errc::ConfigError, ctx + ": expected an integer");
  return j.get<int>();
}

std::string get_string(const json& j, const std::string& ctx) {
  if (!j.is_string()) fail(Errc::ConfigError, ctx + ": expected a string");
  return j.get<std::string>();
}

StatFamily parse_family(const std::string& s, const std::string& ctx) {
  if (s == "score") return StatFamily::Score;
  if (s == "ff") return StatFamily::FullyFunctional;
  fail(Errc::ConfigError, ctx + ": unknown family '" + s + "'");
}

PredictionFlavor parse_flavor(const std::string& s, const std::string& ctx) {
  if (s == "individual") return PredictionFlavor::Individual;
  if (s == "predicted") return PredictionFlavor::Primary;
  if (s == "predicted_unadjusted") return PredictionFlavor::Unadjusted;
  if (s == "predicted_recomputed") return PredictionFlavor::Recomputed;
  fail(Errc::ConfigError, ctx + ": unknown flavor '" + s + "'");
}

NullOptions parse_null_options(const json& j, const std::string& ctx) {
  NullOptions nulls;
  check_keys(j, {"replicates", "grid", "seed", "ff_replicates", "ff_grid"}, ctx);
  if (j.contains("replicates")) nulls.R = get_int(j["replicates"], ctx + ".replicates");
  if (j.contains("grid")) nulls.grid = get_int(j["grid"], ctx + ".grid");
  if (j.contains("seed")) nulls.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("ff_replicates")) nulls.ff_R = get_int(j["ff_replicates"], ctx + ".ff_replicates");
  if (j.contains("ff_grid")) nulls.ff_grid = get_int(j["ff_grid"], ctx + ".ff_grid");
  return nulls;
}

DetectorConfig parse_detector(const json& j, const std::string& ctx) {
  check_keys(j, {"family", "flavor", "q", "alpha"}, ctx);
  DetectorConfig det;
  if (j.contains("family")) det.family = parse_family(get_string(j["family"], ctx), ctx);
  if (j.contains("flavor")) det.flavor = parse_flavor(get_string(j["flavor"], ctx), ctx);
  if (j.contains("q")) det.Q = get_int(j["q"], ctx + ".q");
  if (det.Q < 1) fail(Errc::ConfigError, ctx + ".q: must be at least 1");
  if (j.contains("alpha")) det.alpha = get_number(j["alpha"], ctx + ".alpha");
  if (!(det.alpha > 0.0 && det.alpha <= 1.0))
    fail(Errc::ConfigError, ctx + ".alpha: must lie in (0,1]");
  return det;
}

struct SimulateFile {
  SimConfig cfg;
  bool write_datasets = false;
};

SimulateFile parse_simulate_config(const json& j) {
  check_keys(j,
             {"seed", "replicates", "eta", "etas", "mode", "modes", "detectors", "design", "null",
              "bandwidth", "write_datasets"},
             "config");
  SimulateFile out;
  if (!j.contains("seed")) fail(Errc::ConfigError, "config.seed: required");
  out.cfg.design.seed = j["seed"].get<std::uint64_t>();
  if (!j.contains("replicates")) fail(Errc::ConfigError, "config.replicates: required");
  out.cfg.replicates = get_int(j["replicates"], "config.replicates");
  if (out.cfg.replicates < 1) fail(Errc::ConfigError, "config.replicates: must be at least 1");

  out.cfg.etas.clear();
  if (j.contains("eta")) out.cfg.etas.push_back(get_number(j["eta"], "config.eta"));
  if (j.contains("etas")) {
    if (!j["etas"].is_array()) fail(Errc::ConfigError, "config.etas: expected an array");
    for (std::size_t i = 0; i < j["etas"].size(); ++i)
      out.cfg.etas.push_back(get_number(j["etas"][i], "config.etas[" + std::to_string(i) + "]"));
  }
  if (out.cfg.etas.empty()) fail(Errc::ConfigError, "config.eta: required");
  for (std::size_t i = 0; i < out.cfg.etas.size(); ++i)
    if (out.cfg.etas[i] < 0.0)
      fail(Errc::ConfigError, "config.etas[" + std::to_string(i) + "]: must be nonnegative");

  auto parse_mode = [](const std::string& s, const std::string& ctx) {
    if (s == "independent") return Dependence::Independent;
    if (s == "dependent") return Dependence::Dependent;
    fail(Errc::ConfigError, ctx + ": unknown mode '" + s + "'");
  };
  out.cfg.modes.clear();
  if (j.contains("mode"))
    out.cfg.modes.push_back(parse_mode(get_string(j["mode"], "config.mode"), "config.mode"));
  if (j.contains("modes")) {
    if (!j["modes"].is_array()) fail(Errc::ConfigError, "config.modes: expected an array");
    for (std::size_t i = 0; i < j["modes"].size(); ++i) {
      const std::string ctx = "config.modes[" + std::to_string(i) + "]";
      out.cfg.modes.push_back(parse_mode(get_string(j["modes"][i], ctx), ctx));
    }
  }
  if (out.cfg.modes.empty()) fail(Errc::ConfigError, "config.mode: required");

  if (!j.contains("detectors") || !j["detectors"].is_array() || j["detectors"].empty())
    fail(Errc::ConfigError, "config.detectors: required nonempty array");
  for (std::size_t i = 0; i < j["detectors"].size(); ++i)
    out.cfg.detectors.push_back(
        parse_detector(j["detectors"][i], "config.detectors[" + std::to_string(i) + "]"));

  if (j.contains("design")) {
    const json& d = j["design"];
    check_keys(d, {"n_s1", "n_s2", "years", "points_per_curve"}, "config.design");
    if (d.contains("n_s1")) out.cfg.design.n_s1 = get_int(d["n_s1"], "config.design.n_s1");
    if (d.contains("n_s2")) out.cfg.design.n_s2 = get_int(d["n_s2"], "config.design.n_s2");
    if (d.contains("years")) out.cfg.design.N = get_int(d["years"], "config.design.years");
    if (d.contains("points_per_curve"))
      out.cfg.design.m = get_int(d["points_per_curve"], "config.design.points_per_curve");
    if (out.cfg.design.n_s1 < 1 || out.cfg.design.n_s2 < 1 || out.cfg.design.N < 3 ||
        out.cfg.design.m < 4)
      fail(Errc::ConfigError, "config.design: dimensions too small");
  }
  if (j.contains("null")) out.cfg.nulls = parse_null_options(j["null"], "config.null");
  if (j.contains("bandwidth")) {
    out.cfg.pipeline.bandwidth = get_number(j["bandwidth"], "config.bandwidth");
    if (out.cfg.pipeline.bandwidth <= 0.0)
      fail(Errc::ConfigError, "config.bandwidth: must be positive");
  }
  if (j.contains("write_datasets")) {
    if (!j["write_datasets"].is_boolean())
      fail(Errc::ConfigError, "config.write_datasets: expected a boolean");
    out.write_datasets = j["write_datasets"].get<bool>();
  }
  return out;
}

void write_metrics_csv(const MetricsTable& table, std::ostream& out) {
  out << "eta,dependence,detector,metric,value\n";
  for (const MetricRow& row : table.rows)
    out << format_double(row.eta) << ',' << dependence_name(row.mode) << ',' << row.detector << ','
        << row.metric << ',' << format_double(row.value) << '\n';
}

json metrics_json(const MetricsTable& table) {
  json rows = json::array();
  for (const MetricRow& row : table.rows) {
    json r;
    r["eta"] = row.eta;
    r["dependence"] = dependence_name(row.mode);
    r["detector"] = row.detector;
    r["metric"] = row.metric;
    if (std::isfinite(row.value))
      r["value"] = row.value;
    else
      r["value"] = nullptr;
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

int cmd_simulate(const fs::path& config_path, const fs::path& outdir) {
  const SimulateFile file = parse_simulate_config(load_json(config_path));
  const MetricsTable table = run_study(file.cfg);

  AtomicOutputs outputs;
  {
    std::ofstream csv(outputs.stage(outdir / "metrics.csv"));
    write_metrics_csv(table, csv);
    if (!csv) fail(Errc::IoError, "failed writing metrics.csv");
  }
  {
    json summary;
    summary["replicates"] = file.cfg.replicates;
    summary["seed"] = file.cfg.design.seed;
    summary["etas"] = file.cfg.etas;
    json modes = json::array();
    for (const Dependence mode : file.cfg.modes) modes.push_back(dependence_name(mode));
    summary["modes"] = std::move(modes);
    json detectors = json::array();
    for (const DetectorConfig& det : file.cfg.detectors) detectors.push_back(det.name());
    summary["detectors"] = std::move(detectors);
    summary["design"] = {{"n_s1", file.cfg.design.n_s1},
                         {"n_s2", file.cfg.design.n_s2},
                         {"years", file.cfg.design.N},
                         {"points_per_curve", file.cfg.design.m}};
    summary["metrics"] = metrics_json(table);
    std::ofstream out(outputs.stage(outdir / "summary.json"));
    out << summary.dump(2) << "\n";
    if (!out) fail(Errc::IoError, "failed writing summary.json");
  }
  outputs.commit();

  if (file.write_datasets) {
    for (const Dependence mode : file.cfg.modes)
      for (const double eta : file.cfg.etas)
        for (int r = 0; r < file.cfg.replicates; ++r) {
          auto [ds, truth] = generate_dataset(file.cfg.design, eta, mode, r);
          std::ostringstream name;
          name << "dataset_" << dependence_name(mode) << "_eta" << format_double(eta) << "_rep"
               << r;
          write_gfts(ds, outdir / "datasets" / name.str());
        }
  }
  return 0;
}

namespace {

struct DetectFile {
  ChangeModel model = ChangeModel::Amoc;
  StatFamily family = StatFamily::Score;
  PredictionFlavor flavor = PredictionFlavor::Primary;
  int Q = 4;
  double bandwidth = 0.0;  // 0: default by domain kind
  int bsplines = 0;
  int sh_degree = 10;
  int poly_degree = 5;
  bool explicit_degree = false;
  CovModelKind cov_kind = CovModelKind::IsotropicMatern;
  LikelihoodMode likelihood = LikelihoodMode::Exact;
  int neighbors = 8;
  NullOptions nulls;
  std::string pilot_mode = "null";  // null | individual | file
  fs::path pilot_path;
  std::optional<double> covariance_smoothing;
};

DetectFile parse_detect_config(const json& j) {
  check_keys(j,
             {"model", "family", "flavor", "q", "bandwidth", "bsplines", "spatial_basis",
              "covariance", "null", "pilot", "covariance_smoothing"},
             "config");
  DetectFile out;
  if (j.contains("model")) {
    const std::string s = get_string(j["model"], "config.model");
    if (s == "amoc")
      out.model = ChangeModel::Amoc;
    else if (s == "epidemic")
      out.model = ChangeModel::Epidemic;
    else
      fail(Errc::ConfigError, "config.model: unknown model '" + s + "'");
  }
  if (j.contains("family")) out.family = parse_family(get_string(j["family"], "config.family"), "config.family");
  if (j.contains("flavor")) out.flavor = parse_flavor(get_string(j["flavor"], "config.flavor"), "config.flavor");
  if (j.contains("q")) out.Q = get_int(j["q"], "config.q");
  if (out.Q < 1) fail(Errc::ConfigError, "config.q: must be at least 1");
  if (j.contains("bandwidth")) {
    out.bandwidth = get_number(j["bandwidth"], "config.bandwidth");
    if (out.bandwidth <= 0.0) fail(Errc::ConfigError, "config.bandwidth: must be positive");
  }
  if (j.contains("bsplines")) out.bsplines = get_int(j["bsplines"], "config.bsplines");
  if (j.contains("spatial_basis")) {
    const json& b = j["spatial_basis"];
    check_keys(b, {"kind", "max_degree"}, "config.spatial_basis");
    if (b.contains("max_degree")) {
      const int deg = get_int(b["max_degree"], "config.spatial_basis.max_degree");
      if (deg < 0) fail(Errc::ConfigError, "config.spatial_basis.max_degree: must be nonnegative");
      out.sh_degree = deg;
      out.poly_degree = deg;
      out.explicit_degree = true;
    }
  }
  if (j.contains("covariance")) {
    const json& c = j["covariance"];
    check_keys(c, {"model", "likelihood", "neighbors"}, "config.covariance");
    if (c.contains("model")) {
      const std::string s = get_string(c["model"], "config.covariance.model");
      if (s == "isotropic")
        out.cov_kind = CovModelKind::IsotropicMatern;
      else if (s == "nonstationary")
        out.cov_kind = CovModelKind::NonstationaryAniso;
      else
        fail(Errc::ConfigError, "config.covariance.model: unknown model '" + s + "'");
    }
    if (c.contains("likelihood")) {
      const std::string s = get_string(c["likelihood"], "config.covariance.likelihood");
      if (s == "exact")
        out.likelihood = LikelihoodMode::Exact;
      else if (s == "vecchia")
        out.likelihood = LikelihoodMode::Vecchia;
      else
        fail(Errc::ConfigError, "config.covariance.likelihood: unknown value '" + s + "'");
    }
    if (c.contains("neighbors")) out.neighbors = get_int(c["neighbors"], "config.covariance.neighbors");
    if (out.neighbors < 1) fail(Errc::ConfigError, "config.covariance.neighbors: must be at least 1");
  }
  if (j.contains("covariance_smoothing"))
    out.covariance_smoothing = get_number(j["covariance_smoothing"], "config.covariance_smoothing");
  if (j.contains("null")) out.nulls = parse_null_options(j["null"], "config.null");
  if (j.contains("pilot")) {
    const json& p = j["pilot"];
    check_keys(p, {"mode", "path"}, "config.pilot");
    if (p.contains("mode")) out.pilot_mode = get_string(p["mode"], "config.pilot.mode");
    if (out.pilot_mode != "null" && out.pilot_mode != "individual" && out.pilot_mode != "file")
      fail(Errc::ConfigError, "config.pilot.mode: unknown mode '" + out.pilot_mode + "'");
    if (out.pilot_mode == "file") {
      if (!p.contains("path")) fail(Errc::ConfigError, "config.pilot.path: required");
      out.pilot_path = get_string(p["path"], "config.pilot.path");
    }
  }
  return out;
}

ChangeConfig pilot_from_file(const fs::path& path, ChangeModel model, int n, int N) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot read " + path.string());
  ChangeConfig cfg;
  cfg.model = model;
  std::vector<int> tau(n, N);
  std::vector<std::pair<int, int>> pairs(n, {1, N});
  std::string line;
  std::getline(in, line);  // header loc_id,tau[,tau2]
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::getline(row, field, ',');
    const int loc = std::stoi(field);
    if (loc < 0 || loc >= n)
      fail(Errc::ConfigError, path.string() + " line " + std::to_string(lineno) + ": bad loc_id");
    std::getline(row, field, ',');
    const int t1 = std::stoi(field);
    if (model == ChangeModel::Epidemic) {
      std::getline(row, field, ',');
      pairs[loc] = {t1, std::stoi(field)};
    } else {
      tau[loc] = t1;
    }
  }
  if (model == ChangeModel::Epidemic)
    cfg.pilot_tau_pair = std::move(pairs);
  else
    cfg.pilot_tau = std::move(tau);
  return cfg;
}

}  // namespace

int cmd_detect(const fs::path& data_dir, const fs::path& config_path, const fs::path& outdir) {
  const DetectFile cfg = parse_detect_config(load_json(config_path));
  const FunctionalDataset ds = read_gfts(data_dir);

  PipelineOptions opts;
  opts.Q = cfg.Q;
  opts.bandwidth = cfg.bandwidth > 0.0
                       ? cfg.bandwidth
                       : (ds.domain.kind == DomainKind::SphereLatLon ? 400.0 : 0.08);
  int degree = ds.domain.kind == DomainKind::SphereLatLon ? cfg.sh_degree : cfg.poly_degree;
  if (!cfg.explicit_degree) {
    // default degree capped so the basis never outnumbers the locations
    const int max_fit = static_cast<int>(std::sqrt(static_cast<double>(ds.n))) - 1;
    degree = std::max(0, std::min(degree, max_fit));
  }
  opts.sbasis = ds.domain.kind == DomainKind::SphereLatLon
                    ? SpatialBasis::spherical_harmonics(degree)
                    : SpatialBasis::tensor_polynomial(degree);
  opts.num_bsplines = cfg.bsplines;
  opts.cov_kind = cfg.cov_kind;
  opts.covariance_smoothing = cfg.covariance_smoothing;
  opts.fit.mode = cfg.likelihood;
  opts.fit.vecchia.num_neighbors = cfg.neighbors;

  ChangepointReport report;
  json model_json;
  if (cfg.flavor == PredictionFlavor::Individual) {
    report = individual_reports(ds, cfg.Q, cfg.model, cfg.family, cfg.nulls);
  } else {
    if (ds.n == 1)
      std::cerr << "warning: single location; prediction reduces to nugget shrinkage\n";
    if (cfg.pilot_mode == "individual") {
      const ChangepointReport pilot_rep =
          individual_reports(ds, cfg.Q, cfg.model, cfg.family, cfg.nulls);
      ChangeConfig pilot;
      pilot.model = cfg.model;
      if (cfg.model == ChangeModel::Amoc)
        pilot.pilot_tau = pilot_rep.tau;
      else {
        std::vector<std::pair<int, int>> pairs(ds.n);
        for (int i = 0; i < ds.n; ++i) pairs[i] = {pilot_rep.tau[i], pilot_rep.tau2[i]};
        pilot.pilot_tau_pair = std::move(pairs);
      }
      opts.pilot = std::move(pilot);
    } else if (cfg.pilot_mode == "file") {
      opts.pilot = pilot_from_file(cfg.pilot_path, cfg.model, ds.n, ds.N);
    }
    const PipelineResult pipe = run_pipeline(ds, opts);
    report = predicted_reports(ds, pipe.prediction_inputs(), cfg.family, cfg.flavor, cfg.model,
                               cfg.Q, cfg.nulls);

    model_json["zeta"] = pipe.mean.zeta;
    model_json["eigenvalues"] = std::vector<double>(pipe.pc.eigenvalues.begin(),
                                                    pipe.pc.eigenvalues.end());
    json fits = json::array();
    for (const FitResult& fit : pipe.cov.fits) {
      json f;
      if (std::holds_alternative<IsotropicMatern>(fit.params.model)) {
        const auto& iso = std::get<IsotropicMatern>(fit.params.model);
        f["model"] = "isotropic";
        f["alpha"] = iso.alpha;
        f["nu"] = iso.nu;
      } else {
        const auto& a = std::get<NonstationaryAniso>(fit.params.model);
        f["model"] = "nonstationary";
        f["nu"] = a.nu;
        f["kappa"] = a.kappa;
        std::vector<std::vector<double>> beta(2, std::vector<double>(4));
        for (int r = 0; r < 2; ++r)
          for (int c = 0; c < 4; ++c) beta[r][c] = a.beta(r, c);
        f["beta"] = beta;
      }
      f["loglik"] = fit.loglik;
      f["converged"] = fit.converged;
      fits.push_back(std::move(f));
    }
    model_json["covariance_fits"] = std::move(fits);
    if (cfg.likelihood == LikelihoodMode::Vecchia) model_json["vecchia_neighbors"] = cfg.neighbors;
  }
  model_json["q"] = cfg.Q;
  model_json["family"] = cfg.family == StatFamily::Score ? "score" : "ff";
  model_json["model"] = cfg.model == ChangeModel::Amoc ? "amoc" : "epidemic";
  switch (cfg.flavor) {
    case PredictionFlavor::Individual: model_json["flavor"] = "individual"; break;
    case PredictionFlavor::Primary: model_json["flavor"] = "predicted"; break;
    case PredictionFlavor::Unadjusted: model_json["flavor"] = "predicted_unadjusted"; break;
    case PredictionFlavor::Recomputed: model_json["flavor"] = "predicted_recomputed"; break;
  }
  model_json["bandwidth"] = opts.bandwidth;

  AtomicOutputs outputs;
  {
    std::ofstream csv(outputs.stage(outdir / "report.csv"));
    const bool epidemic = cfg.model == ChangeModel::Epidemic;
    csv << "loc_id,coord1,coord2,stat,p,p_bh,p_bonf,"
        << (epidemic ? "tau1,tau2" : "tau_hat") << ",delta_hat\n";
    for (int i = 0; i < ds.n; ++i) {
      csv << i << ',' << format_double(ds.domain.coords(i, 0)) << ','
          << format_double(ds.domain.coords(i, 1)) << ',' << format_double(report.stat[i]) << ','
          << format_double(report.p[i]) << ',' << format_double(report.p_bh[i]) << ','
          << format_double(report.p_bonf[i]) << ',' << report.tau[i];
      if (epidemic) csv << ',' << report.tau2[i];
      csv << ',' << format_double(report.delta_hat[i]) << '\n';
    }
    if (!csv) fail(Errc::IoError, "failed writing report.csv");
  }
  {
    std::ofstream out(outputs.stage(outdir / "model.json"));
    out << model_json.dump(2) << "\n";
    if (!out) fail(Errc::IoError, "failed writing model.json");
  }
  outputs.commit();
  return 0;
}

int cmd_report(const std::vector<fs::path>& indirs, const fs::path& outfile) {
  if (indirs.empty()) fail(Errc::ConfigError, "report: need at least one input directory");
  std::ostringstream merged;
  merged << "eta,dependence,detector,metric,value\n";
  for (const fs::path& dir : indirs) {
    std::ifstream in(dir / "metrics.csv");
    if (!in) fail(Errc::IoError, "cannot read " + (dir / "metrics.csv").string());
    std::string line;
    std::getline(in, line);
    if (line != "eta,dependence,detector,metric,value")
      fail(Errc::ConfigError, (dir / "metrics.csv").string() + ": unexpected header");
    while (std::getline(in, line))
      if (!line.empty()) merged << line << '\n';
  }
  if (outfile.empty()) {
    std::cout << merged.str();
  } else {
    AtomicOutputs outputs;
    std::ofstream out(outputs.stage(outfile));
    out << merged.str();
    if (!out) fail(Errc::IoError, "failed writing " + outfile.string());
    out.close();
    outputs.commit();
  }
  return 0;
}

int run_cli(int argc, const char* const* argv) {
  auto usage = [](std::ostream& os) {
    os << "usage:\n"
       << "  geoftscp simulate -c config.json -o outdir\n"
       << "  geoftscp detect -d dataset_dir -c config.json -o outdir\n"
       << "  geoftscp report -i dir [-i dir ...] [-o out.csv]\n"
       << "environment: GEOFTSCP_THREADS caps worker threads\n";
  };
  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty() || args[0] == "-h" || args[0] == "--help") {
      usage(args.empty() ? std::cerr : std::cout);
      return args.empty() ? 2 : 0;
    }
    const std::string cmd = args[0];
    fs::path config, data, out;
    std::vector<fs::path> inputs;
    for (std::size_t a = 1; a < args.size(); ++a) {
      const std::string& flag = args[a];
      auto next = [&]() -> std::string {
        if (a + 1 >= args.size()) fail(Errc::ConfigError, "missing value after " + flag);
        return args[++a];
      };
      if (flag == "-c" || flag == "--config")
        config = next();
      else if (flag == "-d" || flag == "--data")
        data = next();
      else if (flag == "-o" || flag == "--out")
        out = next();
      else if (flag == "-i" || flag == "--in")
        inputs.push_back(next());
      else
        fail(Errc::ConfigError, "unknown option " + flag);
    }
    if (cmd == "simulate") {
      if (config.empty() || out.empty())
        fail(Errc::ConfigError, "simulate requires -c config.json and -o outdir");
      return cmd_simulate(config, out);
    }
    if (cmd == "detect") {
      if (config.empty() || out.empty() || data.empty())
        fail(Errc::ConfigError, "detect requires -d dataset, -c config.json, -o outdir");
      return cmd_detect(data, config, out);
    }
    if (cmd == "report") return cmd_report(inputs, out);
    fail(Errc::ConfigError, "unknown command '" + cmd + "'");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace geoftscp
