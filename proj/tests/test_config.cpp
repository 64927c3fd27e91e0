#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "luna/config.hpp"

using namespace luna;

TEST_SUITE("config") {

TEST_CASE("defaults validate") {
  Config c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.d == 64);
  CHECK(c.n_slot_sa == 4);
  CHECK(c.n_turn_sa == 2);
  CHECK(c.dropout == 0.0);
}

TEST_CASE("json round trip preserves every field") {
  Config c;
  c.seed = 99;
  c.epochs = 7;
  c.batch_size = 3;
  c.peak_lr_encoder = 2e-4;
  c.peak_lr_rest = 5e-4;
  c.warmup_proportion = 0.25;
  c.dev_fraction = 0.2;
  c.early_stop_patience = 2;
  c.d = 32;
  c.heads = 8;
  c.utt_layers = 1;
  c.schema_layers = 3;
  c.n_slot_sa = 2;
  c.n_turn_sa = 1;
  c.max_seq_len = 128;
  c.max_turns = 9;
  c.init_std = 0.05;
  c.w_order = 0.5;
  c.w_align = 2.0;
  c.w_value = 0.0;
  c.no_alignment_module = true;
  c.no_overall_slot_to_turn = true;
  c.no_ranking_task = true;
  c.soft_alignment = true;
  c.freeze_schema_encoders = true;
  c.align_first_change = true;

  const Config back = Config::from_json_text(c.to_json_text());
  CHECK(back.to_json_text() == c.to_json_text());
  CHECK(back.seed == 99);
  CHECK(back.w_value == 0.0);
  CHECK(back.soft_alignment);
}

TEST_CASE("unknown field is rejected by name") {
  CHECK_THROWS_WITH_AS(Config::from_json_text(R"({"bogus": 1})"),
                       doctest::Contains("bogus"), ConfigError);
}

TEST_CASE("wrong type is rejected by name") {
  CHECK_THROWS_WITH_AS(Config::from_json_text(R"({"epochs": "three"})"),
                       doctest::Contains("epochs"), ConfigError);
  CHECK_THROWS_WITH_AS(Config::from_json_text(R"({"soft_alignment": 3})"),
                       doctest::Contains("soft_alignment"), ConfigError);
}

TEST_CASE("nonzero dropout is rejected") {
  CHECK_THROWS_WITH_AS(Config::from_json_text(R"({"dropout": 0.1})"),
                       doctest::Contains("dropout"), ConfigError);
}

TEST_CASE("head count must divide width") {
  CHECK_THROWS_AS(Config::from_json_text(R"({"d": 10, "heads": 4})"),
                  ConfigError);
}

TEST_CASE("malformed json and wrong top level") {
  CHECK_THROWS_AS(Config::from_json_text("{not json"), ConfigError);
  CHECK_THROWS_AS(Config::from_json_text("[1, 2]"), ConfigError);
}

TEST_CASE("partial json keeps defaults for missing fields") {
  const Config c = Config::from_json_text(R"({"epochs": 5, "d": 16, "heads": 2})");
  CHECK(c.epochs == 5);
  CHECK(c.d == 16);
  CHECK(c.batch_size == 8);        // default
  CHECK(c.max_seq_len == 512);     // default
}

TEST_CASE("full size hparam preset overrides only learning rates") {
  Config c;
  c.seed = 7;
  const Config p = c.with_paper_hparams();
  CHECK(p.peak_lr_encoder == 3e-5);
  CHECK(p.peak_lr_rest == 1e-4);
  CHECK(p.seed == 7);
  CHECK(p.d == c.d);
}

TEST_CASE("load from file") {
  const char* path = "test_config_tmp.json";
  {
    std::ofstream out(path);
    out << R"({"epochs": 4})";
  }
  const Config c = Config::load(path);
  CHECK(c.epochs == 4);
  std::remove(path);
  CHECK_THROWS_AS(Config::load("does_not_exist_config.json"), IoError);
}

}  // TEST_SUITE
