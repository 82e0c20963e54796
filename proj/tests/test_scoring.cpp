#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "altermoma/scoring.hpp"
#include "support.hpp"

using namespace altermoma;

namespace {

LedgerEntry mk(const std::string& id, Partition p, double deci, std::optional<double> rl,
               std::optional<double> rc) {
  LedgerEntry e;
  e.id = id;
  e.partition = p;
  e.deci = deci;
  e.reri_lidar_masked = rl;
  e.reri_camera_masked = rc;
  return e;
}

}  // namespace

TEST_CASE("prune settings are validated") {
  PruneConfig ok;
  CHECK_NOTHROW(ok.validate());

  PruneConfig c = ok;
  c.rho = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.rho = 0.0;
  CHECK_NOTHROW(c.validate());
  c = ok;
  c.alpha = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ok;
  c.eval_batch_count = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ok;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ok;
  c.reactivation_lr = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.reactivation_steps = 0;  // no steps, so the rate is irrelevant
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("gradient averaging is the mean of per-batch gradients") {
  // L = (w x)^2 on one element; dL/dw = 2 w x^2, so x = 1 and x = 2 give
  // gradients 2 and 8 that must average to exactly 5.
  Graph g;
  Parameter w("w", Partition::Fusion, Tensor::from({1, 1}, {1.0}));
  g.set_loss(g.mse(g.matmul(g.input("x"), g.param(&w)), g.input("t")));
  const Inputs a{{"x", Tensor::from({1, 1}, {1.0})}, {"t", Tensor::from({1, 1}, {0.0})}};
  const Inputs b{{"x", Tensor::from({1, 1}, {2.0})}, {"t", Tensor::from({1, 1}, {0.0})}};

  const GradMap avg = averaged_gradients(g, {a, b});
  CHECK(avg.at("w")[0] == doctest::Approx(5.0).epsilon(1e-15));
  CHECK_THROWS_AS(averaged_gradients(g, {}), std::invalid_argument);
}

TEST_CASE("deactivation terms are theta times the averaged gradient") {
  support::ReferenceSetup rs = support::make_reference_setup();
  PruneConfig cfg;
  cfg.batch_size = 32;
  cfg.eval_batch_count = 3;
  const auto eval = make_eval_batches(rs.data, cfg);
  REQUIRE(eval.size() == 3);

  const GradMap gbar = averaged_gradients(rs.model, eval);
  const ValueMap terms = deci_terms(rs.model, eval);
  const auto scores = deci(rs.model, eval);

  for (Parameter* p : rs.model.parameters()) {
    const auto& t = terms.at(p->id);
    REQUIRE(t.size() == p->size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(t[i] == p->values.data[i] * gbar.at(p->id)[i]);
      CHECK(scores.at(entry_id(p->id, i)) == std::fabs(t[i]));
    }
  }

  rs.model.modality().camera = 0.0;
  CHECK_THROWS_AS(deci_terms(rs.model, eval), std::invalid_argument);
  rs.model.modality().camera = 1.0;
}

TEST_CASE("reactivation with zero steps yields identical start and end gradients") {
  support::ReferenceSetup rs = support::make_reference_setup();
  rs.model.snapshot();
  PruneConfig cfg;
  cfg.batch_size = 32;
  cfg.eval_batch_count = 2;
  cfg.reactivation_steps = 0;

  const ReactivationResult res = reactivate(rs.model, Partition::Lidar, rs.data, cfg);
  CHECK(res.step_losses.empty());
  CHECK(rs.model.modality().lidar == 0.0);  // left masked for the caller

  // Start and end come from the same eval pass on the unchanged model.
  REQUIRE_FALSE(res.grad_start.empty());
  for (const auto& [pid, gs] : res.grad_start) {
    const auto& ge = res.grad_end.at(pid);
    REQUIRE(gs.size() == ge.size());
    for (std::size_t i = 0; i < gs.size(); ++i) CHECK(gs[i] == ge[i]);
  }

  // The masked partition is excluded from the indicator's domain.
  for (Parameter* p : rs.model.partition_params(Partition::Lidar)) {
    CHECK(res.grad_start.count(p->id) == 0);
    CHECK(res.grad_end.count(p->id) == 0);
  }
  for (Parameter* p : rs.model.partition_params(Partition::Camera))
    CHECK(res.grad_start.count(p->id) == 1);
  for (Parameter* p : rs.model.partition_params(Partition::Fusion))
    CHECK(res.grad_start.count(p->id) == 1);

  rs.model.restore();
  rs.model.modality() = ModalityMasks{};
  CHECK_THROWS_AS(reactivate(rs.model, Partition::Fusion, rs.data, cfg), std::invalid_argument);
}

TEST_CASE("reactivation adapts the surviving partitions and lowers the loss") {
  support::ReferenceSetup rs = support::make_reference_setup();
  rs.model.snapshot();
  PruneConfig cfg;
  cfg.batch_size = 64;
  cfg.eval_batch_count = 4;
  cfg.reactivation_steps = 32;
  cfg.reactivation_lr = 0.05;

  const ReactivationResult res = reactivate(rs.model, Partition::Camera, rs.data, cfg);
  REQUIRE(res.step_losses.size() == 32);

  // Masked training should make progress: the last quarter of step losses sits
  // below the first quarter on average.
  const double first = std::accumulate(res.step_losses.begin(), res.step_losses.begin() + 8, 0.0) / 8.0;
  const double last = std::accumulate(res.step_losses.end() - 8, res.step_losses.end(), 0.0) / 8.0;
  CHECK(last < first);

  // The masked partition itself must not have moved.
  for (Parameter* p : rs.model.partition_params(Partition::Camera))
    CHECK(p->values.data == rs.model.snapshot_values().at(p->id));
  bool adapted = false;
  for (Parameter* p : rs.model.partition_params(Partition::Fusion))
    if (p->values.data != rs.model.snapshot_values().at(p->id)) adapted = true;
  CHECK(adapted);

  // End gradients were taken literally on the final training batch, so they
  // differ from the start gradients somewhere.
  bool moved = false;
  for (const auto& [pid, gs] : res.grad_start) {
    const auto& ge = res.grad_end.at(pid);
    for (std::size_t i = 0; i < gs.size() && !moved; ++i) moved = gs[i] != ge[i];
  }
  CHECK(moved);

  rs.model.restore();
  rs.model.modality() = ModalityMasks{};
}

TEST_CASE("redundancy terms subtract the two gradient projections") {
  const ValueMap theta{{"p", {2.0, -1.0, 0.5}}};
  const GradMap gs{{"p", {0.5, 1.0, 4.0}}};
  const GradMap ge{{"p", {0.25, 1.0, -4.0}}};

  const ValueMap t = reri_terms(theta, gs, ge);
  CHECK(t.at("p")[0] == doctest::Approx(0.5).epsilon(1e-15));   // 1.0 - 0.5
  CHECK(t.at("p")[1] == doctest::Approx(0.0).epsilon(1e-15));   // identical grads cancel
  CHECK(t.at("p")[2] == doctest::Approx(4.0).epsilon(1e-15));   // 2.0 - (-2.0)

  const auto scores = reri(theta, gs, ge);
  CHECK(scores.at(entry_id("p", 2)) == doctest::Approx(4.0).epsilon(1e-15));

  CHECK_THROWS_AS(reri_terms(theta, gs, GradMap{{"q", {0.0}}}), std::invalid_argument);
  CHECK_THROWS_AS(reri_terms(theta, gs, GradMap{{"p", {0.0}}}), std::invalid_argument);
}

TEST_CASE("score assembly normalizes per partition and mixes the indicators") {
  ImportanceLedger ledger;
  ledger.entries.push_back(mk("l1", Partition::Lidar, 3.0, std::nullopt, 1.0));
  ledger.entries.push_back(mk("l2", Partition::Lidar, 1.0, std::nullopt, 1.0));
  ledger.entries.push_back(mk("c1", Partition::Camera, 2.0, 4.0, std::nullopt));
  ledger.entries.push_back(mk("c2", Partition::Camera, 2.0, 0.0, std::nullopt));
  ledger.entries.push_back(mk("f1", Partition::Fusion, 5.0, 1.0, 3.0));
  ledger.entries.push_back(mk("f2", Partition::Fusion, 0.0, 1.0, 1.0));

  assemble_scores(ledger, 2.0, 4.0);
  CHECK(ledger.find("l1").score == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(ledger.find("l2").score == doctest::Approx(-1.5).epsilon(1e-12));
  CHECK(ledger.find("c1").score == doctest::Approx(-3.0).epsilon(1e-12));
  CHECK(ledger.find("c2").score == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ledger.find("f1").score == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(ledger.find("f2").score == doctest::Approx(-1.5).epsilon(1e-12));

  // With beta = 0 the ranking inside each partition is the deci ranking.
  assemble_scores(ledger, 1.0, 0.0);
  CHECK(ledger.find("l1").score > ledger.find("l2").score);
  CHECK(ledger.find("c1").score == ledger.find("c2").score);
  CHECK(ledger.find("f1").score > ledger.find("f2").score);

  // A partition whose indicator sums to zero contributes zero, not NaN.
  ImportanceLedger zeros;
  zeros.entries.push_back(mk("a", Partition::Camera, 0.0, 0.0, std::nullopt));
  zeros.entries.push_back(mk("b", Partition::Camera, 0.0, 0.0, std::nullopt));
  assemble_scores(zeros, 1.0, 1.0);
  CHECK(zeros.find("a").score == 0.0);
  CHECK(zeros.find("b").score == 0.0);

  // Backbone entries need the other modality's indicator; fusion needs both.
  ImportanceLedger incomplete;
  incomplete.entries.push_back(mk("cx", Partition::Camera, 1.0, std::nullopt, std::nullopt));
  CHECK_THROWS_WITH_AS(assemble_scores(incomplete, 1.0, 1.0), doctest::Contains("cx"),
                       std::invalid_argument);
  ImportanceLedger half;
  half.entries.push_back(mk("fx", Partition::Fusion, 1.0, 1.0, std::nullopt));
  CHECK_THROWS_AS(assemble_scores(half, 1.0, 1.0), std::invalid_argument);

  CHECK_THROWS_AS(ledger.find("nope"), std::invalid_argument);
}

TEST_CASE("global threshold keeps exactly round((1-rho)N) ids") {
  std::map<std::string, double> scores;
  Rng rng(2024);
  for (int i = 0; i < 200; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "id%04d", i);
    scores[buf] = std::uniform_real_distribution<double>(-1, 1)(rng);
  }
  CHECK(global_threshold(scores, 0.8).size() == 40);
  CHECK(global_threshold(scores, 0.85).size() == 30);
  CHECK(global_threshold(scores, 0.9).size() == 20);
  CHECK(global_threshold(scores, 0.0).size() == 200);
  CHECK_THROWS_AS(global_threshold(scores, 1.0), std::invalid_argument);

  // Kept ids really are the top scorers.
  const auto kept = global_threshold(scores, 0.9);
  double worst_kept = 1e9;
  for (const auto& id : kept) worst_kept = std::min(worst_kept, scores.at(id));
  std::size_t above = 0;
  for (const auto& [id, s] : scores)
    if (s > worst_kept) ++above;
  CHECK(above < 20);

  // Ties break toward the smaller id.
  std::map<std::string, double> tied{{"b", 1.0}, {"a", 1.0}, {"c", 2.0}};
  const auto top2 = global_threshold(tied, 0.4);  // round(0.6*3) = 2
  REQUIRE(top2.size() == 2);
  CHECK(top2[0] == "c");
  CHECK(top2[1] == "a");
}

TEST_CASE("unstructured ledgers cover every entry and keep indicators optional") {
  support::ReferenceSetup rs = support::make_reference_setup();
  SaliencyTerms terms;
  for (Parameter* p : rs.model.parameters()) {
    terms.deci[p->id] = std::vector<double>(p->size(), -0.5);
    if (p->partition != Partition::Lidar)
      terms.reri_lidar_masked[p->id] = std::vector<double>(p->size(), 2.0);
    if (p->partition != Partition::Camera)
      terms.reri_camera_masked[p->id] = std::vector<double>(p->size(), -3.0);
  }

  ImportanceLedger ledger = make_unstructured_ledger(rs.model, terms);
  CHECK(ledger.entries.size() == rs.model.n_entries());
  for (const LedgerEntry& e : ledger.entries) {
    CHECK(e.deci == 0.5);  // absolute value of the signed term
    if (e.partition == Partition::Lidar) {
      CHECK_FALSE(e.reri_lidar_masked.has_value());
      CHECK(e.reri_camera_masked == 3.0);
    } else if (e.partition == Partition::Camera) {
      CHECK(e.reri_lidar_masked == 2.0);
      CHECK_FALSE(e.reri_camera_masked.has_value());
    } else {
      CHECK(e.reri_lidar_masked == 2.0);
      CHECK(e.reri_camera_masked == 3.0);
    }
  }

  SaliencyTerms missing = std::move(terms);
  missing.deci.erase("fusion/l1/weight");
  CHECK_THROWS_AS(make_unstructured_ledger(rs.model, missing), std::invalid_argument);
}

TEST_CASE("channel aggregation sums signed terms before the absolute value") {
  ArchConfig arch;
  arch.in_lidar = 3;
  arch.in_camera = 4;
  arch.hidden_lidar = 2;
  arch.hidden_camera = 2;
  arch.feat_lidar = 2;
  arch.feat_camera = 2;
  arch.fusion_hidden = 2;
  arch.out = 2;
  FusionModel m = FusionModel::build(arch);

  SaliencyTerms terms;
  for (Parameter* p : m.parameters()) terms.deci[p->id] = std::vector<double>(p->size(), 0.0);

  // Channel lidar/l1/ch0000 holds weight column 0 plus bias[0]: plant +0.3 and
  // -0.3 inside it so the signed sum cancels exactly.
  const Channel& ch0 = m.channel("lidar/l1/ch0000");
  auto& wterms = terms.deci["lidar/l1/weight"];
  wterms[ch0.weight_flat_indices[0]] = 0.3;
  wterms[ch0.weight_flat_indices[1]] = -0.3;
  // Its sibling gets a non-cancelling mix summing to -0.75.
  const Channel& ch1 = m.channel("lidar/l1/ch0001");
  wterms[ch1.weight_flat_indices[0]] = -0.5;
  wterms[ch1.weight_flat_indices[1]] = 0.25;
  terms.deci["lidar/l1/bias"][1] = -0.5;

  ImportanceLedger ledger = structured_aggregate(m, terms);
  CHECK(ledger.structured);
  CHECK(ledger.entries.size() == m.channels().size());
  CHECK(ledger.find("lidar/l1/ch0000").deci == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(ledger.find("lidar/l1/ch0001").deci == doctest::Approx(0.75).epsilon(1e-15));
  for (const LedgerEntry& e : ledger.entries) {
    CHECK_FALSE(e.reri_lidar_masked.has_value());  // no reri maps were supplied
    CHECK_FALSE(e.reri_camera_masked.has_value());
  }

  // Supplying the indicator for only one partition fills only those channels.
  for (Parameter* p : m.partition_params(Partition::Camera))
    terms.reri_lidar_masked[p->id] = std::vector<double>(p->size(), 1.0);
  ledger = structured_aggregate(m, terms);
  for (const LedgerEntry& e : ledger.entries)
    CHECK(e.reri_lidar_masked.has_value() == (e.partition == Partition::Camera));

  SaliencyTerms bare;
  CHECK_THROWS_WITH_AS(structured_aggregate(m, bare), doctest::Contains("deactivation"),
                       std::invalid_argument);
}

TEST_CASE("mask commits rewind to the snapshot and keep the top scorers") {
  support::ReferenceSetup rs = support::make_reference_setup();
  FusionModel& m = rs.model;

  ImportanceLedger unsnapshotted;
  CHECK_THROWS_AS(commit_masks(m, unsnapshotted, 0.5), std::runtime_error);

  m.snapshot();
  const auto init = m.snapshot_values();

  // Score every entry by its initial magnitude.
  SaliencyTerms terms;
  for (Parameter* p : m.parameters()) terms.deci[p->id] = p->values.data;
  ImportanceLedger ledger = make_unstructured_ledger(m, terms);
  for (LedgerEntry& e : ledger.entries) e.score = e.deci;

  // Drift the live values; commit must rewind before masking.
  for (Parameter* p : m.parameters())
    for (double& v : p->values.data) v += 7.0;

  const double rho = 0.8;
  const std::size_t k = commit_masks(m, ledger, rho);
  CHECK(k == static_cast<std::size_t>(std::llround((1.0 - rho) * double(m.n_entries()))));
  CHECK(m.kept_entries() == k);

  std::size_t flagged = 0;
  for (const LedgerEntry& e : ledger.entries) flagged += e.kept ? 1 : 0;
  CHECK(flagged == k);

  for (Parameter* p : m.parameters()) {
    const auto& theta0 = init.at(p->id);
    for (std::size_t i = 0; i < p->size(); ++i) {
      if (p->mask[i] == 1.0)
        CHECK(p->values.data[i] == theta0[i]);
      else
        CHECK(p->values.data[i] == 0.0);
    }
  }

  ledger.entries.push_back(ledger.entries.front());
  CHECK_THROWS_AS(commit_masks(m, ledger, rho), std::invalid_argument);
}

TEST_CASE("the full pipeline is deterministic and leaves a masked init model") {
  support::ReferenceSetup rs = support::make_reference_setup();
  FusionModel twin = rs.model.clone();

  PruneConfig cfg;
  cfg.rho = 0.8;
  cfg.batch_size = 32;
  cfg.eval_batch_count = 3;
  cfg.reactivation_steps = 6;
  cfg.reactivation_lr = 0.01;
  cfg.seed = 5;

  const PruneResult a = run_altermoma(rs.model, rs.data, cfg);
  const PruneResult b = run_altermoma(twin, rs.data, cfg);

  CHECK(a.total == rs.model.n_entries());
  CHECK(a.k == static_cast<std::size_t>(std::llround(0.2 * double(a.total))));
  CHECK(rs.model.kept_entries() == a.k);
  CHECK(rs.model.modality().all_unmasked());

  REQUIRE(a.ledger.entries.size() == b.ledger.entries.size());
  for (std::size_t i = 0; i < a.ledger.entries.size(); ++i) {
    const LedgerEntry& ea = a.ledger.entries[i];
    const LedgerEntry& eb = b.ledger.entries[i];
    CHECK(ea.id == eb.id);
    CHECK(ea.score == eb.score);
    CHECK(ea.kept == eb.kept);
  }

  // Kept entries equal the snapshot; pruned entries are zero.
  const auto& init = rs.model.snapshot_values();
  for (Parameter* p : rs.model.parameters()) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      if (p->mask[i] == 1.0)
        CHECK(p->values.data[i] == init.at(p->id)[i]);
      else
        CHECK(p->values.data[i] == 0.0);
    }
  }

  // Indicator domains: each backbone lacks its own masked-stage indicator.
  for (const LedgerEntry& e : a.ledger.entries) {
    if (e.partition == Partition::Lidar) {
      CHECK_FALSE(e.reri_lidar_masked.has_value());
      CHECK(e.reri_camera_masked.has_value());
    } else if (e.partition == Partition::Camera) {
      CHECK(e.reri_lidar_masked.has_value());
      CHECK_FALSE(e.reri_camera_masked.has_value());
    } else {
      CHECK(e.reri_lidar_masked.has_value());
      CHECK(e.reri_camera_masked.has_value());
    }
  }
}

TEST_CASE("ledger files carry every column and the trailing comment") {
  ImportanceLedger ledger;
  ledger.method = "altermoma";
  ledger.entries.push_back(mk("aa", Partition::Lidar, 1.5, std::nullopt, 0.25));
  ledger.entries.back().score = -0.125;
  ledger.entries.back().kept = false;
  ledger.entries.push_back(mk("bb", Partition::Fusion, 2.0, 0.5, 0.75));
  ledger.entries.back().score = 1.0;

  auto dir = std::filesystem::temp_directory_path() / "altermoma_scoring_tests";
  std::filesystem::create_directories(dir);
  const auto csv = (dir / "ledger.csv").string();
  write_ledger_csv(ledger, csv, "# config_hash=00000000deadbeef");

  std::ifstream in(csv);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "id,partition,method,deci,reri_lidar_masked,reri_camera_masked,score,kept");
  REQUIRE(std::getline(in, line));
  CHECK(line == "aa,lidar,altermoma,1.5,,0.25,-0.125,0");
  REQUIRE(std::getline(in, line));
  CHECK(line == "bb,fusion,altermoma,2,0.5,0.75,1,1");
  REQUIRE(std::getline(in, line));
  CHECK(line == "# config_hash=00000000deadbeef");

  const auto js = (dir / "ledger.json").string();
  write_ledger_json(ledger, js);
  std::ifstream jin(js);
  std::string all((std::istreambuf_iterator<char>(jin)), std::istreambuf_iterator<char>());
  CHECK(all.find("\"method\": \"altermoma\"") != std::string::npos);
  CHECK(all.find("\"id\": \"aa\"") != std::string::npos);
  CHECK(all.find("\"reri_camera_masked\": 0.75") != std::string::npos);
}
