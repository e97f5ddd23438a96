// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <thread>

#include "ffkit/augment.hpp"
#include "ffkit/metrics.hpp"
#include "ffkit/pipeline.hpp"
#include "ffkit/service.hpp"
#include "ffkit/stats.hpp"
#include "fixtures.hpp"
#include "oracle.hpp"
#include "pipeline_fixture.hpp"
#include "test_support.hpp"

using namespace ffkit;
using ffkit::testing::read_file;
using ffkit::testing::TempDir;

namespace {

struct Outcome {
  bool pass = true;
  std::string failure;
  std::ostringstream detail;

  // Records the first failure only; later ones are usually consequences.
  bool expect(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      failure = what;
    }
    return ok;
  }
};

using Check = std::function<void(Outcome&)>;

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

GroundTruthAnnotation box_gt(Id id, Id image, Id cat, const BBox& b) {
  GroundTruthAnnotation g;
  g.id = id;
  g.image_id = image;
  g.category_id = cat;
  g.bbox = b;
  g.area = b.area();
  return g;
}

Detection box_det(Id image, Id cat, const BBox& b, double score) {
  Detection d;
  d.image_id = image;
  d.category_id = cat;
  d.bbox = b;
  d.score = score;
  return d;
}

// Headline metrics on the 0-100 scale used in reports.
std::array<double, 5> percent(const EvalReport& r) {
  return {r.map_w * 100.0, r.map_w_50.value() * 100.0, r.map_w_75.value() * 100.0, r.mar_top(1) * 100.0,
          r.mar_top(100) * 100.0};
}

std::string fmt(const char* f, double a, double b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

// --------------------------------------------------------------------------

void metric_oracle(Outcome& o) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20260921);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const auto inst = oracle::random_instance(rng);
    const auto r = evaluate(inst.gt, inst.dets, EvalConfig{});
    const auto ref = oracle::brute_force(inst.gt, inst.dets);
    const double diffs[] = {r.map_w - ref.map_w, r.map_w_50.value() - ref.map_w_50, r.map_w_75.value() - ref.map_w_75,
                            r.mar_top(1) - ref.mar_top1, r.mar_top(100) - ref.mar_top100};
    for (double d : diffs) worst = std::max(worst, std::abs(d));
    if (!o.expect(worst <= 1e-9, "instance " + std::to_string(i) + " differs by " + std::to_string(worst))) return;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.expect(secs < 30.0, "took " + std::to_string(secs) + " s");
  o.detail << "200 instances, max |diff| " << worst << ", " << secs << " s";
}

void ceiling_floor(Outcome& o) {
  Dataset d;
  d.categories = {{1, "a", "x"}, {2, "b", "x"}, {3, "c", "x"}};
  std::vector<Detection> dets;
  Id id = 1;
  for (int i = 1; i <= 4; ++i) {
    d.images.push_back({i, 100, 100, std::to_string(i) + ".jpg"});
    for (int c = 1; c <= 3; ++c) {
      if ((i + c) % 3 == 0) continue;
      GroundTruthAnnotation g;
      g.id = id++;
      g.image_id = i;
      g.category_id = c;
      g.bbox = {10.0 * c, 5.0 * i, 9, 11};
      g.mask = rle_encode(fill_box(g.bbox, 100, 100));
      g.area = static_cast<double>(rle_area(*g.mask));
      d.annotations.push_back(g);
      auto det = box_det(i, c, g.bbox, 1.0);
      det.mask = g.mask;
      dets.push_back(det);
    }
  }
  for (IouKind kind : {IouKind::box, IouKind::mask}) {
    EvalConfig cfg;
    cfg.kind = kind;
    const std::string k = to_string(kind);
    for (double v : percent(evaluate(d, dets, cfg))) o.expect(v == 100.0, k + " ceiling " + std::to_string(v));
    for (double v : percent(evaluate(d, std::vector<Detection>{}, cfg))) o.expect(v == 0.0, k + " floor " + std::to_string(v));
  }
  o.detail << "box and mask: 100.0 / 0.0";
}

void monotonicity(Outcome& o) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 200; ++i) {
    const auto inst = oracle::random_instance(rng);
    const auto r = evaluate(inst.gt, inst.dets, EvalConfig{});
    if (!o.expect(*r.map_w_75 <= *r.map_w_50, "instance " + std::to_string(i) + ": mAP@.75 > mAP@.50")) return;
    if (!o.expect(r.mar_top(100) >= r.mar_top(1), "instance " + std::to_string(i) + ": AR top100 < top1")) return;
  }
  o.detail << "200 instances";
}

void weighting(Outcome& o) {
  Dataset d;
  d.categories = {{1, "a", "x"}, {2, "b", "x"}};
  std::vector<Detection> dets;
  for (int i = 1; i <= 4; ++i) {
    d.images.push_back({i, 50, 50, std::to_string(i) + ".jpg"});
    const Id cat = i <= 3 ? 1 : 2;
    d.annotations.push_back(box_gt(i, i, cat, {5, 5, 10, 10}));
    if (cat == 1) dets.push_back(box_det(i, 1, {5, 5, 10, 10}, 0.9 - 0.1 * i));
  }
  const auto r = evaluate(d, dets, EvalConfig{});
  o.expect(near(r.map_w * 100.0, 75.0, 1e-9), "two-class mAP_w " + std::to_string(r.map_w * 100.0));

  Dataset one;
  one.categories = {{1, "a", "x"}};
  one.images = {{1, 50, 50, "1.jpg"}};
  one.annotations = {box_gt(1, 1, 1, {0, 0, 10, 10}), box_gt(2, 1, 1, {20, 20, 10, 10})};
  const std::vector<Detection> od{box_det(1, 1, {0, 0, 10, 10}, 0.8), box_det(1, 1, {30, 30, 5, 5}, 0.9)};
  const auto s = evaluate(one, od, EvalConfig{});
  o.expect(near(s.map_w, s.per_class_ap.at(1), 1e-15), fmt("single class mAP_w %.12f vs AP %.12f", s.map_w,
                                                           s.per_class_ap.at(1)));
  o.detail << "mAP_w = " << r.map_w * 100.0 << "; single class " << s.map_w << " = AP";
}

void geometry(Outcome& o) {
  std::mt19937_64 rng(2026);
  std::uniform_int_distribution<int> c(0, 30), s(1, 16);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const BBox a{double(c(rng)), double(c(rng)), double(s(rng)), double(s(rng))};
    const BBox b{double(c(rng)), double(c(rng)), double(s(rng)), double(s(rng))};
    worst = std::max(worst, std::abs(box_iou(a, b) - oracle::raster_box_iou(a, b)));
  }
  o.expect(worst <= 1e-12, "box IoU differs by " + std::to_string(worst));

  std::uniform_int_distribution<int> dim(1, 64);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    BitMask m(dim(rng), dim(rng));
    std::bernoulli_distribution on(density(rng));
    for (auto& bit : m.bits) bit = on(rng);
    if (!o.expect(rle_decode(rle_encode(m)) == m, "RLE round trip " + std::to_string(i))) return;
  }
  o.detail << "1000 box pairs (max |diff| " << worst << "), 1000 RLE round trips";
}

void split(Outcome& o) {
  const auto d = fixtures::fashionfail_like();
  const auto r = stratified_split(d, {{0.539, 0.060, 0.401}, 42});
  const std::array<long, 3> expected{1344, 150, 1001};
  const auto global = class_distribution(d);
  double worst = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const long n = static_cast<long>(r.parts[s].images.size());
    o.expect(std::labs(n - expected[s]) <= 1, std::string(kSplitNames[s]) + " has " + std::to_string(n) + " images");
    const auto dist = class_distribution(r.parts[s]);
    for (const auto& [id, f] : global.frequencies) worst = std::max(worst, std::abs(dist.frequencies.at(id) - f));
    o.detail << kSplitNames[s] << "=" << n << " ";
  }
  o.expect(d.images.size() == 2495, "fixture has " + std::to_string(d.images.size()) + " images");
  o.expect(worst <= 0.02, "frequency deviation " + std::to_string(worst * 100) + " points");
  o.detail << "max deviation " << worst * 100 << " points";
}

Sample noise_sample(int h, int w, const std::vector<BBox>& boxes, std::uint64_t seed) {
  Sample s;
  s.raster = Raster(h, w);
  std::mt19937_64 rng(seed);
  for (auto& v : s.raster.data) v = static_cast<std::uint8_t>(rng() & 0xff);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    s.boxes.push_back(boxes[i]);
    s.masks.push_back(fill_box(boxes[i], h, w));
    s.labels.push_back(static_cast<std::int64_t>(i + 1));
  }
  return s;
}

void augmentation(Outcome& o) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 50; ++t) {
    std::vector<BBox> boxes;
    for (int k = 0; k < 3; ++k) {
      const double x = u(rng) * 30, y = u(rng) * 20;
      boxes.push_back({x, y, 1 + u(rng) * (39 - x), 1 + u(rng) * (29 - y)});
    }
    const auto s = noise_sample(30, 41, boxes, t);
    const auto twice = horizontal_flip(horizontal_flip(s));
    o.expect(twice.raster == s.raster && twice.masks == s.masks && twice.labels == s.labels, "double flip pixels differ");
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      const auto& a = twice.boxes[k];
      const auto& b = s.boxes[k];
      o.expect(near(a.x, b.x, 1e-9) && a.y == b.y && a.w == b.w && a.h == b.h, "double flip moves a box");
    }
    std::vector<BBox> grid;
    for (const auto& b : boxes)
      grid.push_back({std::floor(b.x * 2) / 2, std::floor(b.y * 2) / 2, std::ceil(b.w * 2) / 2, std::ceil(b.h * 2) / 2});
    const auto g = noise_sample(30, 41, grid, t);
    o.expect(horizontal_flip(horizontal_flip(g)) == g, "double flip not bit-exact on half-pixel boxes");
    const auto once = box_crop(s);
    o.expect(box_crop(once) == once, "box_crop not idempotent");
  }

  AugmentConfig cfg;
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const double scale = detail::uniform(rng, 0.5, 2.0);
    const BBox b{double(rng() % 40), double(rng() % 40), 200.0 + rng() % 40, 200.0 + rng() % 40};
    const auto s = noise_sample(600, 600, {b}, t);
    const auto j = large_scale_jitter(s, scale, cfg);
    const double expected = static_cast<double>(s.masks[0].area()) * scale * scale;
    worst = std::max(worst, std::abs(static_cast<double>(j.masks[0].area()) - expected) / expected);
  }
  o.expect(worst <= 0.02, "jitter mask area off by " + std::to_string(worst * 100) + "%");

  const auto s = noise_sample(40, 50, {{5, 5, 20, 20}, {30, 10, 10, 25}}, 3);
  cfg.random_anchor = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 a(seed), b(seed);
    o.expect(apply_pipeline(s, cfg, a) == apply_pipeline(s, cfg, b), "pipeline differs for seed " + std::to_string(seed));
  }
  o.detail << "flip, crop, jitter area (max " << worst * 100 << "%), determinism";
}

void pipeline_accounting(Outcome& o) {
  TempDir dir;
  fixtures::PipelineFixture fx;
  fixtures::populate(fx);
  DecisionLog log(dir.file("log.jsonl"));
  auto state = run_pipeline(make_candidates(fx.entries), {fx.label, fx.box, fx.mask}, log);
  auto counts = count_statuses(state);
  o.expect(counts.total == 20, "total " + std::to_string(counts.total));
  o.expect(counts.rejected_by_reason["anomaly"] == 5, "anomalies " + std::to_string(counts.rejected_by_reason["anomaly"]));
  o.expect(counts.by_status["auto_rejected"] == 5, "auto_rejected " + std::to_string(counts.by_status["auto_rejected"]));
  o.expect(counts.by_status["awaiting_review"] == 15,
           "awaiting_review " + std::to_string(counts.by_status["awaiting_review"]));

  int flags = 0;
  for (auto& c : state) {
    if (c.status != CandidateStatus::awaiting_review) continue;
    c = record_review(c, flags++ < 3 ? Verdict{VerdictKind::flag, "bad_mask", {}} : Verdict{}, log, "acceptance");
  }
  counts = count_statuses(state);
  o.expect(counts.by_status["approved"] == 12 && counts.by_status["flagged"] == 3, "verdict counts");
  std::vector<AnnotationCandidate> approved;
  for (const auto& c : state)
    if (c.status == CandidateStatus::approved) approved.push_back(c);
  const auto d = export_dataset(approved, fashionfail_ontology());
  o.expect(d.annotations.size() == 12, "export has " + std::to_string(d.annotations.size()) + " annotations");
  const auto problems = validate(d);
  o.expect(problems.empty(), problems.empty() ? "" : "validate: " + problems.front());
  o.detail << "5 anomaly, 15 awaiting, 12 approved exported";
}

void correlation(Outcome& o) {
  std::map<std::string, double> sa, sb, pa, pb;
  for (int i = 0; i < 22; ++i) {
    const std::string n = "class" + std::to_string(i);
    sa[n] = 0.05 + 0.01 * i;
    sb[n] = 0.3 + 0.02 * i;
    pa[n] = 0.8;
    pb[n] = 0.8 - (0.15 + 0.03 * i);
  }
  const auto r = scale_performance_correlation(sa, sb, pa, pb);
  o.expect(r.pearson_r.has_value() && near(*r.pearson_r, 1.0, 1e-12),
           "r = " + (r.pearson_r ? std::to_string(*r.pearson_r) : std::string("undefined")));
  if (r.pearson_r) o.detail << "r = 1 - " << 1.0 - *r.pearson_r << " over " << r.classes.size() << " classes";
}

void review_api(Outcome& o) {
  TempDir dir;
  fixtures::PipelineFixture fx;
  fixtures::populate(fx);
  DecisionLog log(dir.file("log.jsonl"));
  const auto cands = make_candidates(fx.entries);
  run_pipeline(cands, {fx.label, fx.box, fx.mask}, log);
  ReviewService svc(ReviewMode::quality, log, fx.entries, cands, {});

  httplib::Server server;
  svc.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  int decided = 0;
  bool durable = true, conflict = false;
  for (;;) {
    auto next = client.Get("/api/queue/next");
    if (!o.expect(next && (next->status == 200 || next->status == 204), "queue/next failed")) break;
    if (next->status == 204) break;
    const std::string id = nlohmann::json::parse(next->body)["id"];
    const std::string url = "/api/items/" + detail::url_encode_path(id) + "/decision";
    auto r = client.Post(url, R"({"verdict":"approve"})", "application/json");
    if (!o.expect(r && r->status == 200, "decision on " + id + " failed")) break;
    durable = durable && read_file(dir.file("log.jsonl")).find("\"candidate_id\":\"" + id + "\",\"stage\":\"review\"") !=
                             std::string::npos;
    if (decided++ == 0) {
      auto again = client.Post(url, R"({"verdict":"flag","reason":"bad_box"})", "application/json");
      conflict = again && again->status == 409;
    }
  }
  server.stop();
  t.join();
  o.expect(durable, "a 2xx arrived before its record was in the log");
  o.expect(conflict, "double decide did not return 409");
  o.expect(decided == 15, "decided " + std::to_string(decided) + " of 15 before 204");
  o.detail << decided << " decisions over HTTP, 409 on repeat, 204 when drained";
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Check>> checks{
      {"metric-oracle-equivalence", metric_oracle},
      {"ceiling-floor", ceiling_floor},
      {"threshold-monotonicity", monotonicity},
      {"weighting-semantics", weighting},
      {"geometry", geometry},
      {"stratified-split", split},
      {"augmentation-invariants", augmentation},
      {"pipeline-accounting", pipeline_accounting},
      {"scale-correlation", correlation},
      {"review-api", review_api},
  };
  int failed = 0;
  for (const auto& [name, check] : checks) {
    Outcome o;
    try {
      check(o);
    } catch (const std::exception& e) {
      o.expect(false, std::string("exception: ") + e.what());
    }
    std::printf("%s %-28s %s\n", o.pass ? "PASS" : "FAIL", name,
                o.pass ? o.detail.str().c_str() : o.failure.c_str());
    failed += !o.pass;
  }
  std::printf("%zu/%zu criteria passed\n", checks.size() - failed, checks.size());
  return failed ? 1 : 0;
}
