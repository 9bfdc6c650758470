#include <bit>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fruitlet/checkpoint.hpp"
#include "fruitlet/config.hpp"
#include "fruitlet/dataset.hpp"
#include "fruitlet/digest.hpp"
#include "fruitlet/evaluation.hpp"
#include "fruitlet/metrics.hpp"
#include "fruitlet/pipeline.hpp"
#include "fruitlet/report.hpp"
#include "fruitlet/synth.hpp"

using namespace fruitlet;
using nlohmann::json;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in, "mem.jsonl");
}

const char* kRecord = R"({"type":"record","cluster_id":"a","day":0,"fruitlets":[{"fruitlet_id":"x","points":[[0,0,0],[1,0,0]]}]})";

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("fruitlet_test_" + name);
}

CorrespondenceSet set_of(std::size_t m, std::size_t n, std::vector<Match> matches) {
  return CorrespondenceSet::from_matches(m, n, std::move(matches));
}

}  // namespace

TEST_CASE("dataset errors name the line and the JSON path") {
  const std::string bad = std::string(kRecord) + "\n" +
                          R"({"type":"record","cluster_id":"a","day":1,"fruitlets":[{"fruitlet_id":"x","points":[[0,0,0],[1,0]]}]})";
  const std::string msg = error_of([&] { parse(bad); });
  CHECK(msg.find("mem.jsonl:2:") != std::string::npos);
  CHECK(msg.find("$.fruitlets[0].points[1]") != std::string::npos);

  CHECK(error_of([] { parse(R"({"type":"record","cluster_id":"a","fruitlets":[]})"); }).find("$.day") !=
        std::string::npos);
  CHECK(error_of([] { parse("{not json"); }).find("mem.jsonl:1:") != std::string::npos);
  CHECK(error_of([] { parse(R"({"type":"frame"})"); }).find("$.type") != std::string::npos);
  CHECK_THROWS_AS(parse(R"({"type":"pair","cluster_id":"a","day_t":0,"day_t1":1,"gt_matches":[[0,-1]]})"), DataError);
}

TEST_CASE("empty dataset file and blank lines") {
  CHECK(parse("").records.empty());
  CHECK(parse("\n  \n").pairs.empty());
  CHECK_THROWS_AS(load_dataset(temp_path("does_not_exist.jsonl")), DataError);
}

TEST_CASE("duplicate fruitlet ids are rejected") {
  const std::string dup =
      R"({"type":"record","cluster_id":"a","day":0,"fruitlets":[{"fruitlet_id":"x","points":[[0,0,0]]},{"fruitlet_id":"x","points":[[1,1,1]]}]})";
  const std::string msg = error_of([&] { parse(dup); });
  CHECK(msg.find("$.fruitlets[1].fruitlet_id") != std::string::npos);
  CHECK(msg.find("duplicate") != std::string::npos);
}

TEST_CASE("pairs resolve against records") {
  const std::string text = std::string(kRecord) + "\n" +
                           R"({"type":"record","cluster_id":"a","day":2,"fruitlets":[{"fruitlet_id":"y","points":[[0,0,1]]}]})" +
                           "\n" + R"({"type":"pair","cluster_id":"a","day_t":0,"day_t1":2,"gt_matches":[[0,0]]})" + "\n" +
                           R"({"type":"pair","cluster_id":"a","day_t":0,"day_t1":2})";
  const auto pairs = resolve_pairs(parse(text));
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].day_gap == 2);
  CHECK(pairs[0].has_truth);
  CHECK(pairs[0].truth.matches == std::vector<Match>{{0, 0}});
  CHECK_FALSE(pairs[1].has_truth);

  const std::string missing = std::string(kRecord) + "\n" + R"({"type":"pair","cluster_id":"a","day_t":0,"day_t1":3})";
  const std::string msg = error_of([&] { resolve_pairs(parse(missing), "mem.jsonl"); });
  CHECK(msg.find("mem.jsonl:2:") != std::string::npos);
  CHECK(msg.find("day 3") != std::string::npos);
  const std::string out_of_range =
      std::string(kRecord) + "\n" + R"({"type":"pair","cluster_id":"a","day_t":0,"day_t1":0,"gt_matches":[[0,4]]})";
  CHECK_THROWS_AS(resolve_pairs(parse(out_of_range)), DataError);
}

TEST_CASE("dataset text round-trips at float32 precision") {
  auto pairs = generate_dataset(SynthConfig{}, 3, 0, 4);
  pairs[1].has_truth = false;
  std::ostringstream first;
  write_pairs(first, pairs);
  std::istringstream in(first.str());
  const auto back = resolve_pairs(parse_dataset(in));
  REQUIRE(back.size() == pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    CHECK(back[k].has_truth == pairs[k].has_truth);
    if (pairs[k].has_truth) CHECK(back[k].truth == pairs[k].truth);
    const auto& a = pairs[k].day_t1.fruitlets;
    const auto& b = back[k].day_t1.fruitlets;
    REQUIRE(a.size() == b.size());
    for (std::size_t f = 0; f < a.size(); ++f) {
      CHECK(a[f].fruitlet_id == b[f].fruitlet_id);
      for (std::size_t i = 0; i < a[f].cloud.size(); ++i)
        for (int c = 0; c < 3; ++c)
          CHECK(static_cast<float>(b[f].cloud.points[i][c]) == static_cast<float>(a[f].cloud.points[i][c]));
    }
  }
  std::ostringstream second;
  write_pairs(second, back);
  CHECK(second.str() == first.str());
}

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("tensor payload round-trips bit-exactly") {
  ParamStore params;
  const float denormal = std::numeric_limits<float>::denorm_min();
  params.create("a/w", {2, 3}, {0.1f, -0.0f, denormal, std::numeric_limits<float>::max(), -1e-30f, 3.0f});
  params.create("b", {1, 1}, {std::nextafter(1.0f, 2.0f)});
  std::stringstream s;
  write_tensor_payload(s, params);
  const ParamStore back = read_tensor_payload(s);
  REQUIRE(back.tensors().size() == 2);
  for (const auto& [name, t] : params.tensors()) {
    const auto& u = back.at(name);
    CHECK(u.shape() == t.shape());
    for (std::size_t k = 0; k < t.numel(); ++k)
      CHECK(std::bit_cast<uint32_t>(u.data()[k]) == std::bit_cast<uint32_t>(t.data()[k]));
  }
}

TEST_CASE("checkpoints save, load and save byte-identically") {
  std::mt19937_64 rng(4);
  ParamStore params;
  params.create_weight("layer/weight", 5, 7, rng);
  params.create_constant("layer/bias", {1, 7}, 0.25f);
  const json config = {{"kind", "test"}, {"value", 3}};
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, params, config);
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.config == config);
  CHECK(encode_checkpoint(loaded.params, loaded.config) == encode_checkpoint(params, config));
  std::filesystem::remove(path);
}

TEST_CASE("damaged checkpoints are rejected with specific errors") {
  ParamStore params;
  params.create("w", {2, 2}, {1, 2, 3, 4});
  const std::string bytes = encode_checkpoint(params, json{{"kind", "test"}});

  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 5)), CheckpointDigestError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 20)), CheckpointDigestError);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(decode_checkpoint(flipped), CheckpointDigestError);
  CHECK_THROWS_AS(decode_checkpoint("NOTACKPT" + bytes.substr(8)), DataError);

  // A future format version with a valid digest.
  std::string future = bytes.substr(0, bytes.size() - 32);
  const std::size_t version_at = kCheckpointMagic.size();
  for (std::size_t k = version_at; k < version_at + 4; ++k)
    if (future[k] == 1) future[k] = 2;
  const auto d = sha256(future);
  future.append(reinterpret_cast<const char*>(d.data()), d.size());
  const std::string msg = error_of([&] { decode_checkpoint(future, "x.ckpt"); });
  CHECK(msg.find("version 2") != std::string::npos);
  CHECK_THROWS_AS(decode_checkpoint(future), CheckpointVersionError);
}

TEST_CASE("model config mismatch names both dimensions") {
  ModelConfig expected, found;
  found.matcher.feature_dim = 128;
  const std::string msg = error_of([&] { check_compatible(expected, found); });
  CHECK(msg.find("feature_dim") != std::string::npos);
  CHECK(msg.find("128") != std::string::npos);
  CHECK(msg.find("256") != std::string::npos);
  CHECK_THROWS_AS(check_compatible(expected, found), DataError);
  CHECK_NOTHROW(check_compatible(expected, expected));
  CHECK(ModelConfig::from_json(expected.to_json()).to_json() == expected.to_json());
}

TEST_CASE("pair metrics examples") {
  const auto gt = set_of(3, 3, {{0, 0}, {1, 1}});
  auto s = score_pair(set_of(3, 3, {{0, 0}, {1, 2}}), gt);
  CHECK(s.tp == 1);
  CHECK(s.fp == 1);
  CHECK(s.fn == 1);
  CHECK(s.f1 == doctest::Approx(0.5));
  s = score_pair(set_of(3, 3, {}), gt);
  CHECK(s.precision == 0.0);
  CHECK(s.recall == 0.0);
  CHECK(s.f1 == 0.0);
  s = score_pair(set_of(3, 3, {}), set_of(3, 3, {}));
  CHECK(s.f1 == 1.0);
  s = score_pair(set_of(3, 3, {{2, 2}}), set_of(3, 3, {}));
  CHECK(s.precision == 0.0);
  CHECK(s.recall == 1.0);
  CHECK(s.f1 == 0.0);
}

TEST_CASE("metrics agree with hand counting") {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.4);
  std::vector<PairScore> scores;
  std::size_t tp = 0, fp = 0, fn = 0;
  double macro_f1 = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Match> a, b;
    for (std::size_t i = 0; i < 5; ++i) {
      if (coin(rng)) a.emplace_back(i, i);
      if (coin(rng)) b.emplace_back(i, coin(rng) ? i : (i + 1) % 5);
    }
    std::sort(b.begin(), b.end());
    // Keep b one-to-one.
    std::set<std::size_t> used;
    std::vector<Match> b1;
    for (const auto& m : b)
      if (used.insert(m.second).second) b1.push_back(m);
    const auto truth = set_of(5, 5, a), pred = set_of(5, 5, b1);
    std::size_t t = 0;
    for (const auto& m : b1) t += std::count(a.begin(), a.end(), m);
    const std::size_t f = b1.size() - t, n = a.size() - t;
    const double p = b1.empty() ? (a.empty() ? 1.0 : 0.0) : double(t) / b1.size();
    const double r = a.empty() ? 1.0 : double(t) / a.size();
    const double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    const auto s = score_pair(pred, truth);
    CHECK(s.tp == t);
    CHECK(s.fp == f);
    CHECK(s.fn == n);
    CHECK(s.f1 == doctest::Approx(f1));
    scores.push_back(s);
    tp += t, fp += f, fn += n;
    macro_f1 += f1;
  }
  const auto sum = summarize(scores);
  CHECK(sum.n_pairs == 300);
  CHECK(sum.f1 == doctest::Approx(macro_f1 / 300));
  CHECK(sum.micro_precision == doctest::Approx(double(tp) / (tp + fp)));
  CHECK(sum.micro_recall == doctest::Approx(double(tp) / (tp + fn)));
}

TEST_CASE("reports group by day gap and round-trip through JSON") {
  std::vector<ScoredPair> pairs;
  const auto gt = set_of(2, 2, {{0, 0}, {1, 1}});
  pairs.push_back({"c1", 1, set_of(2, 2, {{0, 0}, {1, 1}}), gt, {}});
  pairs.push_back({"c2", 1, set_of(2, 2, {{0, 1}}), gt, {}});
  pairs.push_back({"c3", 3, set_of(2, 2, {{0, 0}}), gt, {}});
  const EvalReport r = build_report("m", pairs, 2);
  CHECK(r.overall.n_pairs == 3);
  CHECK(r.excluded_without_truth == 2);
  REQUIRE(r.by_day_gap.size() == 2);
  CHECK(r.by_day_gap.at(1).f1 == doctest::Approx(0.5));
  CHECK(r.by_day_gap.at(3).f1 == doctest::Approx(2.0 / 3));
  CHECK(r.overall.f1 == doctest::Approx((1.0 + 0.0 + 2.0 / 3) / 3));

  const json j = report_to_json(r);
  const EvalReport back = report_from_json(j);
  CHECK(report_to_json(back) == j);

  std::ostringstream csv;
  const std::vector<EvalReport> reports{r};
  write_report_csv(csv, reports);
  std::istringstream lines(csv.str());
  std::string header, row;
  std::getline(lines, header);
  CHECK(header == "method,day_gap,precision,recall,f1,n_pairs");
  int rows = 0;
  bool saw_all = false;
  while (std::getline(lines, row)) {
    ++rows;
    CHECK(std::count(row.begin(), row.end(), ',') == 5);
    saw_all = saw_all || row.rfind("m,all,", 0) == 0;
  }
  CHECK(rows == 3);
  CHECK(saw_all);
}

TEST_CASE("threshold sweep keeps the smallest tau among ties") {
  const std::vector<std::vector<double>> p{{0.9, 0.05, 0.05, 0.6}};
  const std::vector<CorrespondenceSet> truth{set_of(2, 2, {{0, 0}, {1, 1}})};
  const auto sweep = sweep_threshold(p, truth, 0.1, 0.9, 0.1);
  CHECK(sweep.f1 == doctest::Approx(1.0));
  CHECK(sweep.tau == doctest::Approx(0.1));
  CHECK(sweep.curve.size() == 9);
  CHECK(sweep.curve.back().second == doctest::Approx(0.0));
  CHECK_THROWS_AS(sweep_threshold(p, truth, 0.5, 0.1, 0.1), UsageError);
}

TEST_CASE("config overrides, unknown keys and the seed variable") {
  json tree = RunConfig{}.to_json();
  apply_override(tree, "train.epochs=3");
  apply_override(tree, "model.positional_mode=full_bbox");
  CHECK(tree["train"]["epochs"] == 3);
  CHECK(tree["model"]["positional_mode"] == "full_bbox");
  CHECK_THROWS_AS(apply_override(tree, "train.epoch=3"), UsageError);
  CHECK_THROWS_AS(apply_override(tree, "train.epochs"), UsageError);

  const auto file = temp_path("config.json");
  {
    std::ofstream out(file);
    out << R"({"seed": 11, "train": {"epochs": 5, "batch_size": 4}})";
  }
  const std::vector<std::string> overrides{"train.epochs=9"};
  const RunConfig a = resolve_config(file, overrides);
  CHECK(a.seed == 11);
  CHECK(a.train.epochs == 9);
  CHECK(a.train.batch_size == 4);
  CHECK(a.model.init_seed == 11);
  const RunConfig b = resolve_config(file, overrides, "23");
  CHECK(b.seed == 23);
  CHECK(b.train.seed == 23);
  CHECK(RunConfig::from_json(b.to_json()).to_json() == b.to_json());
  {
    std::ofstream out(file);
    out << R"({"train": {"epochz": 5}})";
  }
  CHECK(error_of([&] { resolve_config(file, {}); }).find("epochz") != std::string::npos);
  std::filesystem::remove(file);
}
