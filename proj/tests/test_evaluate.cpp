// Copyright 2026 The dsprop Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "doctest.h"

#include <random>

#include "dsprop/errors.hpp"
#include "dsprop/evaluate.hpp"
#include "dsprop/sweep.hpp"
#include "fixtures.hpp"

using namespace dsprop;
using namespace dsprop::testing;

TEST_CASE("confusion matrix and IoU") {
  SUBCASE("perfect predictions give mIoU 1") {
    ConfusionMatrix cm(3);
    std::vector<std::int32_t> y = {0, 1, 2, 2, 1, 0, 0};
    cm.add(y, y);
    CHECK(cm.miou() == 1.0);
    for (int c = 0; c < 3; ++c) CHECK(cm.iou(c) == 1.0);
  }
  SUBCASE("constant predictor on a balanced two-class set") {
    ConfusionMatrix cm(2);
    std::vector<std::int32_t> y = {0, 0, 0, 0, 1, 1, 1, 1};
    std::vector<std::int32_t> p(8, 0);
    cm.add(y, p);
    CHECK(cm.iou(0) == 0.5);
    CHECK(cm.iou(1) == 0.0);
    CHECK(cm.miou() == 0.25);
    EvalReport r = make_report(cm);
    CHECK(r.truth_counts == std::vector<std::uint64_t>{4, 4});
    CHECK(r.predicted_counts == std::vector<std::uint64_t>{8, 0});
  }
  SUBCASE("classes absent from the ground truth do not count") {
    ConfusionMatrix cm(3);
    std::vector<std::int32_t> y = {0, 0, 1, 1};
    std::vector<std::int32_t> p = {0, 2, 1, 1};
    cm.add(y, p);
    CHECK(cm.iou(2) == 0.0);
    CHECK(cm.miou() == doctest::Approx((0.5 + 1.0) / 2.0));
  }
  SUBCASE("random matrices: IoU within [0, 1] and matches a set-based oracle") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 200; ++trial) {
      const int k = 2 + static_cast<int>(rng() % 5);
      std::vector<std::int32_t> y(50), p(50);
      for (auto& v : y) v = static_cast<std::int32_t>(rng() % static_cast<unsigned>(k));
      for (auto& v : p) v = static_cast<std::int32_t>(rng() % static_cast<unsigned>(k));
      ConfusionMatrix cm(k);
      cm.add(y, p);
      double sum = 0.0;
      int present = 0;
      for (int c = 0; c < k; ++c) {
        int inter = 0, uni = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
          inter += y[i] == c && p[i] == c;
          uni += y[i] == c || p[i] == c;
        }
        const double oracle = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
        CHECK(cm.iou(c) == doctest::Approx(oracle));
        CHECK(cm.iou(c) >= 0.0);
        CHECK(cm.iou(c) <= 1.0);
        if (std::count(y.begin(), y.end(), c) > 0) {
          sum += oracle;
          ++present;
        }
      }
      CHECK(cm.miou() == doctest::Approx(sum / present));
    }
  }
  SUBCASE("errors") {
    ConfusionMatrix cm(2);
    std::vector<std::int32_t> a = {0, 1}, b = {0}, bad = {0, 2};
    CHECK_THROWS_AS(cm.add(a, b), DimensionError);
    CHECK_THROWS_AS(cm.add(a, bad), IndexError);
    CHECK_THROWS_AS(ConfusionMatrix(0), ConfigError);
  }
}

TEST_CASE("evaluation branches") {
  Dataset train = toy_dataset(3, 5);
  Dataset test = toy_dataset(2, 40, 0.05, false);
  TrainConfig c = toy_train_config(TrainMode::kCsfrIsfr);
  Trainer t(c, train);
  t.run();
  Model& m = t.model();
  REQUIRE(m.w_c.has_value());
  REQUIRE(m.w_s.has_value());
  const EvalOptions opts{"test", c.crop_radius, 7};

  SUBCASE("basic branch never touches the reallocation weights") {
    m.w_c->note_access();
    EvalReport r = evaluate(m, test, Branch::kBasic, opts);
    CHECK(r.module_accesses == 0);
    CHECK(m.w_c->access_count() == 0);
    CHECK(m.w_s->access_count() == 0);
    CHECK(r.points == test.num_original_points());
    CHECK(r.crops > 0);
    for (double iou : r.iou) {
      CHECK(iou >= 0.0);
      CHECK(iou <= 1.0);
    }
    auto j = to_json(r);
    CHECK(j["branch"] == "basic");
    CHECK(j["classes"].size() == 7);
    CHECK(format_report(r).find("mIoU") != std::string::npos);
  }
  SUBCASE("diagnostic branches use their module and are reproducible") {
    EvalReport cross = evaluate(m, test, Branch::kCross, opts);
    CHECK(cross.module_accesses == cross.crops);
    EvalReport intra = evaluate(m, test, Branch::kIntra, opts);
    CHECK(intra.module_accesses == intra.crops);
    EvalReport again = evaluate(m, test, Branch::kCross, opts);
    CHECK(again.iou == cross.iou);
  }
  SUBCASE("evaluation is deterministic") {
    EvalReport a = evaluate(m, test, Branch::kBasic, opts);
    EvalReport b = evaluate(m, test, Branch::kBasic, opts);
    CHECK(a.iou == b.iou);
    CHECK(a.predicted_counts == b.predicted_counts);
  }
  SUBCASE("missing modules and empty splits") {
    Model bare(c);
    CHECK_THROWS_AS(evaluate(bare, test, Branch::kCross, opts), ConfigError);
    CHECK_THROWS_AS(evaluate(bare, test, Branch::kIntra, opts), ConfigError);
    Dataset empty;
    empty.num_classes = 7;
    CHECK_THROWS_AS(evaluate(bare, empty, Branch::kBasic, opts), ConfigError);
  }
  CHECK(parse_branch("intra") == Branch::kIntra);
  CHECK_THROWS_AS(parse_branch("both"), ConfigError);
}

TEST_CASE("sweep statistics") {
  SweepResult r;
  SweepCell cell;
  cell.mode = TrainMode::kJoint;
  r.cells.push_back(cell);
  CHECK(&r.cell(TrainMode::kJoint) == &r.cells[0]);
  CHECK_THROWS_AS(r.cell(TrainMode::kCsfr), ConfigError);
  CHECK(all_modes().size() == 6);
}
