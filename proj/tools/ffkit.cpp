// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// ffkit command line: eval, stats, split, augment, pipeline, serve.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "ffkit/augment.hpp"
#include "ffkit/datamodel.hpp"
#include "ffkit/metrics.hpp"
#include "ffkit/oracle_http.hpp"
#include "ffkit/pipeline.hpp"
#include "ffkit/service.hpp"
#include "ffkit/stats.hpp"
#include "image_io.hpp"

namespace fs = std::filesystem;

namespace ffkit::tools {
namespace {

constexpr int kDefaultPort = 8420;

int default_port() {
  if (const char* env = std::getenv("FFKIT_PORT")) {
    try {
      const int p = std::stoi(env);
      if (p > 0 && p < 65536) return p;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid FFKIT_PORT '" << env << "'\n";
  }
  return kDefaultPort;
}

std::vector<double> parse_doubles(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ValidationError({std::string(what) + ": '" + part + "' is not a number"});
    }
  }
  return out;
}

void write_json(const nlohmann::ordered_json& j, const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  detail::write_text_file(path, j.dump(1) + "\n");
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string gt, dt, kind = "box", method = "detector", report = "eval_report.json";
  double score_floor = 0.05;
};

int run_eval(const EvalArgs& a) {
  const Dataset gt = load_dataset(a.gt);
  const auto dets = load_detections(a.dt);
  if (a.kind != "box" && a.kind != "mask" && a.kind != "both")
    throw ValidationError({"--kind must be box, mask or both"});

  TableRow row{a.method, {}, {}};
  nlohmann::ordered_json report;
  report["method"] = a.method;
  for (IouKind k : {IouKind::box, IouKind::mask}) {
    if (a.kind != "both" && a.kind != to_string(k)) continue;
    EvalConfig cfg;
    cfg.kind = k;
    cfg.score_floor = a.score_floor;
    const EvalReport r = evaluate(gt, dets, cfg);
    (k == IouKind::box ? row.box : row.mask) = MetricSummary::from(r);
    report[to_string(k)] = report_json(r, &gt);
  }
  std::cout << render_table(std::span<const TableRow>(&row, 1));
  if (!a.report.empty()) write_json(report, a.report);
  return 0;
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

struct StatsArgs {
  std::string gt, out, compare, ap_a, ap_b, ap_kind = "box";
  std::vector<std::string> splits;
};

std::map<std::string, double> per_class_ap_from_report(const std::string& path, const std::string& kind) {
  const auto j = detail::read_json_file(path);
  if (!j.contains(kind) || !j[kind].contains("per_class_ap"))
    throw ParseError("'" + path + "': no " + kind + " per_class_ap (expected an `ffkit eval` report)");
  std::map<std::string, double> out;
  for (const auto& [name, v] : j[kind]["per_class_ap"].items()) out[name] = v.get<double>();
  return out;
}

int run_stats(const StatsArgs& a) {
  const Dataset gt = load_dataset(a.gt);
  std::vector<std::pair<std::string, ClassDistribution>> columns{{"all", class_distribution(gt)}};
  for (const auto& s : a.splits) columns.emplace_back(fs::path(s).stem().string(), class_distribution(load_dataset(s)));
  std::cout << render_distribution_table(gt.categories, columns) << "\n";

  const auto sizes = mask_size_distribution(gt);
  nlohmann::ordered_json out;
  out["images"] = gt.images.size();
  out["annotations"] = gt.annotations.size();
  out["classes"] = nlohmann::ordered_json::array();
  std::printf("%-40s %8s %8s %8s\n", "relative mask size", "n", "mean", "median");
  for (const auto& c : gt.categories) {
    auto v = sizes.at(c.id);
    std::sort(v.begin(), v.end());
    nlohmann::ordered_json cj;
    cj["id"] = c.id;
    cj["name"] = c.name;
    cj["count"] = columns[0].second.counts.at(c.id);
    cj["frequency"] = columns[0].second.frequencies.at(c.id);
    if (!v.empty()) {
      double sum = 0;
      for (double x : v) sum += x;
      const double mean = sum / static_cast<double>(v.size());
      const double median = v.size() % 2 ? v[v.size() / 2] : (v[v.size() / 2 - 1] + v[v.size() / 2]) / 2;
      cj["relative_size"] = {{"mean", mean}, {"median", median}, {"min", v.front()}, {"max", v.back()}};
      std::printf("%-40s %8zu %8.4f %8.4f\n", c.name.c_str(), v.size(), mean, median);
    }
    out["classes"].push_back(cj);
  }
  for (std::size_t i = 1; i < columns.size(); ++i) {
    nlohmann::ordered_json sj;
    sj["annotations"] = columns[i].second.total;
    for (const auto& c : gt.categories) sj["counts"][c.name] = columns[i].second.counts.at(c.id);
    out["splits"][columns[i].first] = sj;
  }

  const bool correlate = !a.compare.empty() || !a.ap_a.empty() || !a.ap_b.empty();
  if (correlate) {
    if (a.compare.empty() || a.ap_a.empty() || a.ap_b.empty())
      throw ValidationError({"--compare, --ap-a and --ap-b must be given together"});
    const auto r = scale_performance_correlation(mean_relative_size(gt), mean_relative_size(load_dataset(a.compare)),
                                                 per_class_ap_from_report(a.ap_a, a.ap_kind),
                                                 per_class_ap_from_report(a.ap_b, a.ap_kind));
    std::printf("\n%-40s %12s %12s\n", "class", "|d size|", "|d AP|");
    nlohmann::ordered_json cj;
    cj["classes"] = nlohmann::ordered_json::array();
    for (const auto& c : r.classes) {
      std::printf("%-40s %12.4f %12.4f\n", c.name.c_str(), c.size_delta, c.ap_delta);
      cj["classes"].push_back({{"name", c.name}, {"size_delta", c.size_delta}, {"ap_delta", c.ap_delta}});
    }
    if (r.pearson_r) std::printf("pearson r = %.6f\n", *r.pearson_r);
    else std::printf("pearson r = n/a (zero variance)\n");
    cj["pearson_r"] = r.pearson_r ? nlohmann::ordered_json(*r.pearson_r) : nlohmann::ordered_json(nullptr);
    out["correlation"] = cj;
  }
  if (!a.out.empty()) write_json(out, a.out);
  return 0;
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

struct SplitArgs {
  std::string gt, fractions = "0.539,0.060,0.401", out_dir;
  std::uint64_t seed = 0;
};

int run_split(const SplitArgs& a) {
  const Dataset gt = load_dataset(a.gt);
  const auto f = parse_doubles(a.fractions, "--fractions");
  if (f.size() != 3) throw ValidationError({"--fractions needs exactly three values (train,val,test)"});
  const auto r = stratified_split(gt, {{f[0], f[1], f[2]}, a.seed});
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  fs::create_directories(a.out_dir);
  std::vector<std::pair<std::string, ClassDistribution>> columns{{"all", class_distribution(gt)}};
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string path = (fs::path(a.out_dir) / (std::string(kSplitNames[s]) + ".json")).string();
    save_dataset(r.parts[s], path);
    std::cout << kSplitNames[s] << ": " << r.parts[s].images.size() << " images, " << r.parts[s].annotations.size()
              << " annotations -> " << path << "\n";
    columns.emplace_back(kSplitNames[s], class_distribution(r.parts[s]));
  }
  std::cout << "\n" << render_distribution_table(gt.categories, columns);
  return 0;
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

struct AugmentArgs {
  std::string gt, images, out_dir, pad = "128,128,128";
  std::uint64_t seed = 0;
  bool preview = false;
  AugmentConfig cfg;
};

int run_augment(AugmentArgs a) {
  const auto pad = parse_doubles(a.pad, "--pad");
  if (pad.size() != 3) throw ValidationError({"--pad needs three values r,g,b"});
  for (std::size_t i = 0; i < 3; ++i) a.cfg.pad_value[i] = static_cast<std::uint8_t>(std::clamp(pad[i], 0.0, 255.0));
  a.cfg.seed = a.seed;
  a.cfg.check();

  const Dataset gt = load_dataset(a.gt);
  std::map<Id, std::vector<const GroundTruthAnnotation*>> by_image;
  for (const auto& ann : gt.annotations) by_image[ann.image_id].push_back(&ann);

  Dataset out;
  out.categories = gt.categories;
  Id next_ann = 1;
  for (const auto& img : gt.images) {
    Sample s;
    s.raster = read_raster((fs::path(a.images) / img.file_name).string());
    if (s.raster.width != img.width || s.raster.height != img.height) {
      throw ValidationError({"image " + std::to_string(img.id) + " ('" + img.file_name + "') is " +
                             std::to_string(s.raster.width) + "x" + std::to_string(s.raster.height) +
                             ", annotation file says " + std::to_string(img.width) + "x" + std::to_string(img.height)});
    }
    const auto& anns = by_image[img.id];
    const bool masks = !anns.empty() && std::all_of(anns.begin(), anns.end(), [](auto* p) { return p->mask.has_value(); });
    for (const auto* ann : anns) {
      s.boxes.push_back(ann->bbox);
      s.labels.push_back(ann->category_id);
      if (masks) s.masks.push_back(rle_decode(*ann->mask));
    }
    std::mt19937_64 rng(derive_seed(a.seed, static_cast<std::uint64_t>(img.id)));
    const Sample t = apply_pipeline(s, a.cfg, rng);
    write_raster(t.raster, (fs::path(a.out_dir) / img.file_name).string());

    out.images.push_back({img.id, t.raster.width, t.raster.height, img.file_name});
    for (std::size_t i = 0; i < t.boxes.size(); ++i) {
      GroundTruthAnnotation g;
      g.id = next_ann++;
      g.image_id = img.id;
      g.category_id = t.labels[i];
      g.bbox = t.boxes[i];
      if (!t.masks.empty()) {
        g.mask = rle_encode(t.masks[i]);
        g.area = static_cast<double>(rle_area(*g.mask));
      } else {
        g.area = g.bbox.area();
      }
      out.annotations.push_back(std::move(g));
    }
    if (a.preview) {
      Raster before = s.raster, after = t.raster;
      draw_boxes(before, s.boxes);
      draw_boxes(after, t.boxes);
      const auto name = fs::path(img.file_name).stem().string() + ".png";
      write_raster(compose_side_by_side({before, after}), (fs::path(a.out_dir) / "preview" / name).string());
    }
  }
  const std::string ann_path = (fs::path(a.out_dir) / "annotations.json").string();
  save_dataset(out, ann_path);
  std::cout << "augmented " << out.images.size() << " images, " << out.annotations.size() << " annotations -> "
            << ann_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

struct PipelineArgs {
  std::string manifest, log, image_root = ".", labels, boxes, label_url, box_url, mask_url, prompt = "an object",
                                  actor = "pipeline", out;
  std::size_t workers = 4;
  bool require_filter = false, all_categories = false;
};

HttpOracleConfig http_config(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ValidationError({"oracle URL '" + url + "' needs a scheme (http://...)"});
  const auto slash = url.find('/', scheme + 3);
  HttpOracleConfig c;
  c.base_url = url.substr(0, slash);
  c.path = slash == std::string::npos ? "/" : url.substr(slash);
  return c;
}

std::vector<AnnotationCandidate> load_candidates(const PipelineArgs& a, DecisionLog& log) {
  const auto ingested = ingest(a.manifest, [&](const std::string& p) {
    return probe_image((fs::path(a.image_root) / p).string());
  });
  for (const auto& s : ingested.skipped)
    std::cerr << "skipped manifest line " << s.line << " ('" << s.id << "'): " << s.reason << "\n";
  return make_candidates(ingested.entries, fold_filters(log.records()), a.require_filter);
}

void print_counts(const std::vector<AnnotationCandidate>& state) {
  const auto c = count_statuses(state);
  std::cout << "candidates: " << c.total << "\n";
  for (const auto& [status, n] : c.by_status) std::cout << "  " << status << ": " << n << "\n";
  for (const auto& [reason, n] : c.rejected_by_reason) std::cout << "  auto_rejected(" << reason << "): " << n << "\n";
  for (const auto& [reason, n] : c.flagged_by_reason) std::cout << "  flagged(" << reason << "): " << n << "\n";
}

int run_pipeline_cmd(const PipelineArgs& a) {
  DecisionLog log(a.log);
  const auto candidates = load_candidates(a, log);

  std::unique_ptr<LabelOracle> label;
  if (!a.label_url.empty()) {
    label = std::make_unique<HttpLabelOracle>(http_config(a.label_url));
  } else if (!a.labels.empty()) {
    auto t = std::make_unique<TableLabelOracle>();
    const auto table = detail::read_json_file(a.labels);
    for (const auto& [k, v] : table.items()) {
      if (!v.is_string()) throw ParseError("'" + a.labels + "': label for '" + k + "' must be a string");
      t->table[normalize_label(k)] = v.get<std::string>();
    }
    label = std::move(t);
  } else {
    throw ValidationError({"a label oracle is required: --label-url or --labels"});
  }
  std::unique_ptr<BoxOracle> box;
  if (!a.box_url.empty()) {
    box = std::make_unique<HttpBoxOracle>(http_config(a.box_url));
  } else {
    auto t = std::make_unique<TableBoxOracle>();
    if (!a.boxes.empty()) {
      const auto table = detail::read_json_file(a.boxes);
      for (const auto& [k, v] : table.items()) t->table[k] = detail::parse_boxes(v, a.boxes);
    }
    box = std::move(t);
  }
  std::unique_ptr<MaskOracle> mask;
  if (!a.mask_url.empty()) mask = std::make_unique<HttpMaskOracle>(http_config(a.mask_url));
  else mask = std::make_unique<RectMaskOracle>();

  PipelineConfig cfg;
  cfg.prompt = a.prompt;
  cfg.workers = a.workers;
  cfg.actor = a.actor;
  print_counts(run_pipeline(candidates, {*label, *box, *mask}, log, cfg));
  return 0;
}

int run_pipeline_status(const PipelineArgs& a) {
  DecisionLog log(a.log);
  print_counts(fold(load_candidates(a, log), log.records()));
  return 0;
}

int run_pipeline_export(const PipelineArgs& a) {
  DecisionLog log(a.log);
  std::vector<AnnotationCandidate> approved;
  for (auto& c : fold(load_candidates(a, log), log.records()))
    if (c.status == CandidateStatus::approved) approved.push_back(std::move(c));
  const Dataset d = export_dataset(approved, fashionfail_ontology(), a.all_categories);
  save_dataset(d, a.out);
  std::cout << "exported " << d.images.size() << " images, " << d.annotations.size() << " annotations, "
            << d.categories.size() << " categories -> " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

struct ServeArgs {
  PipelineArgs p;
  std::string queue = "quality", host = "127.0.0.1", ui_dir;
  int port = 0;
  double window = 60.0;
};

int run_serve(const ServeArgs& a) {
  const ReviewMode mode = parse_review_mode(a.queue);
  DecisionLog log(a.p.log);
  const auto ingested = ingest(a.p.manifest, [&](const std::string& p) {
    return probe_image((fs::path(a.p.image_root) / p).string());
  });
  for (const auto& s : ingested.skipped)
    std::cerr << "skipped manifest line " << s.line << " ('" << s.id << "'): " << s.reason << "\n";
  std::vector<AnnotationCandidate> candidates;
  if (mode == ReviewMode::quality)
    candidates = make_candidates(ingested.entries, fold_filters(log.records()), a.p.require_filter);

  ServiceOptions opts;
  opts.image_root = a.p.image_root;
  opts.window = std::chrono::milliseconds(static_cast<long long>(a.window * 1000));
  ReviewService service(mode, log, ingested.entries, candidates, opts);
  httplib::Server server;
  service.mount(server);
  if (!a.ui_dir.empty() && !server.set_mount_point("/", a.ui_dir))
    throw IoError("cannot serve UI directory '" + a.ui_dir + "'");
  const int port = a.port > 0 ? a.port : default_port();
  const auto st = service.queue_state();
  std::cout << "review service (" << to_string(mode) << ", " << st.completed << "/" << st.total
            << " decided) on http://" << a.host << ":" << port << std::endl;
  if (!server.listen(a.host, port)) throw IoError("cannot listen on " + a.host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"ffkit: evaluation, statistics, augmentation and annotation tooling for apparel detection datasets"};
  app.require_subcommand(1);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Class-frequency-weighted AP/AR of detections against ground truth");
  eval->add_option("--gt", ea.gt, "Ground-truth COCO annotation file")->required();
  eval->add_option("--dt", ea.dt, "Detections (COCO results list)")->required();
  eval->add_option("--kind", ea.kind, "box, mask or both")->capture_default_str();
  eval->add_option("--method", ea.method, "Row label in the printed table")->capture_default_str();
  eval->add_option("--report", ea.report, "Report JSON path (empty to skip)")->capture_default_str();
  eval->add_option("--score-floor", ea.score_floor, "Drop detections scoring below this")->capture_default_str();

  StatsArgs sa;
  auto* stats = app.add_subcommand("stats", "Class distribution, mask sizes and scale-vs-AP correlation");
  stats->add_option("--gt", sa.gt, "Annotation file")->required();
  stats->add_option("--splits", sa.splits, "Split annotation files to tabulate next to --gt");
  stats->add_option("--out", sa.out, "Write statistics JSON here");
  stats->add_option("--compare", sa.compare, "Second dataset for the scale-vs-AP correlation");
  stats->add_option("--ap-a", sa.ap_a, "eval report for --gt");
  stats->add_option("--ap-b", sa.ap_b, "eval report for --compare");
  stats->add_option("--ap-kind", sa.ap_kind, "box or mask")->capture_default_str();

  SplitArgs pa;
  auto* split = app.add_subcommand("split", "Stratified train/val/test split");
  split->add_option("--gt", pa.gt, "Annotation file")->required();
  split->add_option("--fractions", pa.fractions, "train,val,test")->capture_default_str();
  split->add_option("--seed", pa.seed, "Shuffle seed")->required();
  split->add_option("--out-dir", pa.out_dir, "Output directory for train/val/test.json")->required();

  AugmentArgs aa;
  auto* augment = app.add_subcommand("augment", "Flip, photometric, union-box crop and large-scale jitter");
  augment->add_option("--gt", aa.gt, "Annotation file")->required();
  augment->add_option("--images", aa.images, "Directory holding the images")->required();
  augment->add_option("--out-dir", aa.out_dir, "Output directory")->required();
  augment->add_option("--seed", aa.seed, "Random seed")->required();
  augment->add_option("--p-flip", aa.cfg.flip_probability)->capture_default_str();
  augment->add_option("--p-photometric", aa.cfg.photometric_probability)->capture_default_str();
  augment->add_option("--p-crop", aa.cfg.crop_probability)->capture_default_str();
  augment->add_option("--p-jitter", aa.cfg.jitter_probability)->capture_default_str();
  augment->add_option("--jitter-min", aa.cfg.jitter_min)->capture_default_str();
  augment->add_option("--jitter-max", aa.cfg.jitter_max)->capture_default_str();
  augment->add_flag("--random-anchor", aa.cfg.random_anchor, "Place jittered content at a random offset");
  augment->add_option("--pad", aa.pad, "Jitter pad colour r,g,b")->capture_default_str();
  augment->add_flag("--preview", aa.preview, "Also write before/after composites to <out-dir>/preview");

  PipelineArgs pl;
  auto* pipeline = app.add_subcommand("pipeline", "Model-assisted annotation pipeline");
  pipeline->require_subcommand(1);
  auto common = [&](CLI::App* c) {
    c->add_option("--manifest", pl.manifest, "Line-delimited product manifest")->required();
    c->add_option("--log", pl.log, "Decision log")->required();
    c->add_option("--image-root", pl.image_root, "Directory manifest image paths are relative to")
        ->capture_default_str();
    c->add_flag("--require-filter", pl.require_filter, "Only products with a recorded keep decision");
  };
  auto* prun = pipeline->add_subcommand("run", "Run (or resume) the label, box and mask stages");
  common(prun);
  prun->add_option("--labels", pl.labels, "JSON object description -> label (mock label oracle)");
  prun->add_option("--boxes", pl.boxes, "JSON object image path -> [{bbox, score}] (mock box oracle)");
  prun->add_option("--label-url", pl.label_url, "Label model endpoint");
  prun->add_option("--box-url", pl.box_url, "Detector endpoint");
  prun->add_option("--mask-url", pl.mask_url, "Segmenter endpoint");
  prun->add_option("--prompt", pl.prompt, "Detector text prompt")->capture_default_str();
  prun->add_option("--workers", pl.workers, "Concurrent candidates")->capture_default_str()->check(CLI::PositiveNumber);
  prun->add_option("--actor", pl.actor, "Actor name in the log")->capture_default_str();
  auto* pstatus = pipeline->add_subcommand("status", "Candidate counts by status");
  common(pstatus);
  auto* pexport = pipeline->add_subcommand("export", "Write approved candidates as a COCO dataset");
  common(pexport);
  pexport->add_option("--out", pl.out, "Output annotation file")->required();
  pexport->add_flag("--all-categories", pl.all_categories, "Include every surviving category");

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "HTTP review service");
  serve->add_option("--manifest", sv.p.manifest, "Line-delimited product manifest")->required();
  serve->add_option("--log", sv.p.log, "Decision log")->required();
  serve->add_option("--image-root", sv.p.image_root, "Directory manifest image paths are relative to")
      ->capture_default_str();
  serve->add_flag("--require-filter", sv.p.require_filter, "Quality queue only holds products kept by filter review");
  serve->add_option("--queue", sv.queue, "filter or quality")->capture_default_str();
  serve->add_option("--host", sv.host, "Bind address")->capture_default_str();
  serve->add_option("--port", sv.port, "Port (default $FFKIT_PORT or 8420)");
  serve->add_option("--ui-dir", sv.ui_dir, "Static UI files served at /");
  serve->add_option("--window", sv.window, "Speed window in seconds")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*eval) return run_eval(ea);
    if (*stats) return run_stats(sa);
    if (*split) return run_split(pa);
    if (*augment) return run_augment(aa);
    if (*prun) return run_pipeline_cmd(pl);
    if (*pstatus) return run_pipeline_status(pl);
    if (*pexport) return run_pipeline_export(pl);
    if (*serve) return run_serve(sv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ffkit::tools

int main(int argc, char** argv) { return ffkit::tools::run(argc, argv); }
