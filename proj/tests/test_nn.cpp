#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "luna/grad_check.hpp"
#include "luna/nn.hpp"

using namespace luna;

TEST_SUITE_BEGIN("nn");

TEST_CASE("param store keeps unique names in sorted order") {
  ParamStore store(1);
  store.add("b.second", 1, 1, ParamStore::zeros_init());
  store.add("a.first", 1, 1, ParamStore::zeros_init());
  CHECK_THROWS_AS(store.add("a.first", 1, 1, ParamStore::zeros_init()),
                  ContractError);
  auto all = store.all();
  REQUIRE(all.size() == 2);
  CHECK(all[0]->name() == "a.first");
  CHECK(all[1]->name() == "b.second");
  CHECK_THROWS_AS(store.at("missing"), ContractError);
}

TEST_CASE("param store seeding is reproducible") {
  auto build = [] {
    ParamStore store(99);
    store.add("w", 4, 4, ParamStore::normal_init(0.2));
    store.add("v", 2, 8, ParamStore::normal_init(0.2));
    return std::make_pair(store.at("w").value(), store.at("v").value());
  };
  auto [w1, v1] = build();
  auto [w2, v2] = build();
  CHECK(w1 == w2);
  CHECK(v1 == v2);
}

TEST_CASE("freeze_prefix detaches matching parameters from training") {
  ParamStore store(2);
  store.add("enc.w", 2, 2, ParamStore::normal_init(1.0));
  store.add("enc.b", 1, 2, ParamStore::zeros_init());
  store.add("head.w", 2, 2, ParamStore::normal_init(1.0));
  store.freeze_prefix("enc.", true);
  CHECK(store.at("enc.w").frozen());
  CHECK(store.at("head.w").frozen() == false);
  auto trainable = store.trainable();
  REQUIRE(trainable.size() == 1);
  CHECK(trainable[0]->name() == "head.w");

  Tensor loss = sum_all(store.at("enc.w").tensor()) +
                sum_all(store.at("head.w").tensor());
  loss.backward();
  CHECK(store.at("enc.w").grad().size() == 0);
  CHECK(store.at("head.w").grad().size() != 0);
}

TEST_CASE("attention config rejects indivisible head counts") {
  CHECK_THROWS_AS(AttentionConfig(8, 3), ConfigError);
  CHECK_THROWS_AS(AttentionConfig(0, 1), ConfigError);
  AttentionConfig ok(8, 2);
  CHECK(ok.head_dim == 4);
}

namespace {

// Make every projection of an attention layer the identity map so the
// raw softmax(QK^T/sqrt(d))V arithmetic is exposed.
void make_identity(ParamStore& store, const std::string& prefix, int d) {
  for (const char* leaf : {".q.w", ".k.w", ".v.w", ".o.w"})
    store.at(prefix + leaf).mutable_value() = Mat::Identity(d, d);
}

}  // namespace

TEST_CASE("single-head attention with identity projections matches hand oracle") {
  const int d = 2;
  ParamStore store(3);
  MultiHeadAttention mha(store, "a", AttentionConfig(d, 1), 0.1);
  make_identity(store, "a", d);

  Mat q(1, 2), k(2, 2), v(2, 2);
  q << 1, 0;
  k << 1, 0, 0, 1;
  v << 10, 20, 30, 40;

  AttentionTrace trace;
  Mat out = mha.apply(Tensor(q), Tensor(k), Tensor(v), nullptr, &trace).value();

  const double s = 1.0 / std::sqrt(2.0);
  const double w0 = std::exp(s) / (std::exp(s) + std::exp(0.0));
  const double w1 = 1.0 - w0;
  REQUIRE(trace.head_weights.size() == 1);
  CHECK(trace.head_weights[0](0, 0) == doctest::Approx(w0).epsilon(1e-14));
  CHECK(out(0, 0) == doctest::Approx(10 * w0 + 30 * w1).epsilon(1e-14));
  CHECK(out(0, 1) == doctest::Approx(20 * w0 + 40 * w1).epsilon(1e-14));
}

TEST_CASE("attention weights rows sum to one per head") {
  ParamStore store(4);
  MultiHeadAttention mha(store, "a", AttentionConfig(8, 4), 0.3);
  Tensor x(random_mat(5, 8, 17));
  AttentionTrace trace;
  mha.apply(x, x, x, nullptr, &trace);
  REQUIRE(trace.head_weights.size() == 4);
  for (const Mat& w : trace.head_weights)
    for (Index r = 0; r < w.rows(); ++r)
      CHECK(std::abs(w.row(r).sum() - 1.0) < 1e-12);
}

TEST_CASE("span mask pins each query to its span") {
  const int d = 4;
  ParamStore store(5);
  MultiHeadAttention mha(store, "a", AttentionConfig(d, 1), 0.1);
  make_identity(store, "a", d);

  Tensor kv(random_mat(6, d, 18));
  Tensor q(random_mat(3, d, 19));
  Mat mask = span_mask({{0, 1}, {2, 1}, {5, 1}}, 6);
  Mat out = mha.apply(q, kv, kv, &mask).value();
  CHECK((out.row(0) - kv.value().row(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out.row(1) - kv.value().row(2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out.row(2) - kv.value().row(5)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("masked-out attention weights are exactly zero") {
  ParamStore store(6);
  MultiHeadAttention mha(store, "a", AttentionConfig(8, 2), 0.3);
  Tensor x(random_mat(5, 8, 20));
  Mat mask = block_diag_mask({2, 3});
  AttentionTrace trace;
  mha.apply(x, x, x, &mask, &trace);
  for (const Mat& w : trace.head_weights) {
    CHECK(w.block(0, 2, 2, 3).cwiseAbs().maxCoeff() == 0.0);
    CHECK(w.block(2, 0, 3, 2).cwiseAbs().maxCoeff() == 0.0);
    for (Index r = 0; r < w.rows(); ++r)
      CHECK(std::abs(w.row(r).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("block-diagonal masking makes stacked segments independent") {
  // Running two segments through one masked call must equal two unmasked calls.
  ParamStore store(7);
  MultiHeadAttention mha(store, "a", AttentionConfig(8, 2), 0.3);
  Mat seg1 = random_mat(3, 8, 21);
  Mat seg2 = random_mat(4, 8, 22);
  Mat stacked(7, 8);
  stacked << seg1, seg2;

  Mat mask = block_diag_mask({3, 4});
  Mat joint = mha.apply(Tensor(stacked), Tensor(stacked), Tensor(stacked), &mask)
                  .value();
  Mat solo1 = mha.apply(Tensor(seg1), Tensor(seg1), Tensor(seg1)).value();
  Mat solo2 = mha.apply(Tensor(seg2), Tensor(seg2), Tensor(seg2)).value();
  CHECK((joint.topRows(3) - solo1).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((joint.bottomRows(4) - solo2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention validates mask and key shapes") {
  ParamStore store(8);
  MultiHeadAttention mha(store, "a", AttentionConfig(8, 2), 0.3);
  Tensor q(random_mat(2, 8, 23));
  Tensor kv(random_mat(3, 8, 24));
  Mat bad_mask = Mat::Zero(2, 5);
  CHECK_THROWS_AS(mha.apply(q, kv, kv, &bad_mask), ShapeError);
  Tensor empty(Mat::Zero(0, 8));
  CHECK_THROWS_AS(mha.apply(q, empty, empty), ContractError);
  Tensor mismatched(random_mat(4, 8, 25));
  CHECK_THROWS_AS(mha.apply(q, kv, mismatched), ShapeError);
}

TEST_CASE("span mask rejects out-of-range spans") {
  CHECK_THROWS_AS(span_mask({{0, 3}}, 2), ContractError);
  CHECK_THROWS_AS(span_mask({{-1, 1}}, 2), ContractError);
  CHECK_THROWS_AS(span_mask({{0, 0}}, 2), ContractError);
}

TEST_CASE("transformer block preserves shape and passes gradient check") {
  ParamStore store(9);
  TransformerBlock block(store, "blk", AttentionConfig(4, 2), 0.2);
  Mat xv = random_mat(3, 4, 26);
  Tensor out = block.apply(Tensor(xv));
  CHECK(out.rows() == 3);
  CHECK(out.cols() == 4);

  auto f = [&] { return sum_all(cmul(block.apply(Tensor(xv)), Tensor(xv))); };
  std::vector<Parameter*> params = store.trainable();
  GradCheckReport report = finite_diff_check(f, params, 1e-5, 40);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("attention gradient check with mask") {
  ParamStore store(10);
  MultiHeadAttention mha(store, "a", AttentionConfig(4, 2), 0.3);
  Mat xv = random_mat(4, 4, 27);
  Mat mask = block_diag_mask({2, 2});
  Tensor target(random_mat(4, 4, 28));
  auto f = [&] {
    Tensor out = mha.apply(Tensor(xv), Tensor(xv), Tensor(xv), &mask);
    Tensor diff = out - target;
    return sum_all(cmul(diff, diff));
  };
  GradCheckReport report = finite_diff_check(f, store.trainable(), 1e-5, 40);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("embedding table gathers rows and trains") {
  ParamStore store(11);
  EmbeddingTable emb(store, "emb", 10, 4, 0.5);
  Tensor rows = emb.rows({3, 7, 3});
  CHECK(rows.rows() == 3);
  CHECK((rows.value().row(0) - emb.table.value().row(3)).cwiseAbs().maxCoeff() ==
        0.0);
  Tensor loss = sum_all(rows);
  loss.backward();
  CHECK(emb.table.grad()(3, 0) == 2.0);
  CHECK(emb.table.grad()(7, 0) == 1.0);
}

TEST_SUITE_END();
