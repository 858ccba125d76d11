#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "convgrade/encoder.hpp"
#include "convgrade/log.hpp"
#include "fixtures.hpp"
#include "oracle.hpp"

using namespace convgrade;
using fixtures::C;
using fixtures::I;
using fixtures::make_conv;

namespace {

EncoderConfig small_cfg(std::size_t vocab, std::size_t dim = 6, std::size_t hidden = 4) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab;
  cfg.embed_dim = dim;
  cfg.lstm_hidden = hidden;
  cfg.max_tokens = 400;
  return cfg;
}

SequenceBatch raw_batch(std::vector<std::size_t> ids, std::vector<std::size_t> segs) {
  SequenceBatch b;
  b.token_ids = std::move(ids);
  b.segment_ids = std::move(segs);
  return b;
}

Tensor run(const SequenceEncoder& enc, const ParamStore& store, const SequenceBatch& b) {
  Tape t;
  return enc.encode(t, store, b).value();
}

double row_diff(const Tensor& a, std::size_t ra, const Tensor& b, std::size_t rb) {
  double m = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) m = std::max(m, std::abs(a.at(ra, c) - b.at(rb, c)));
  return m;
}

}  // namespace

TEST_CASE("assemble_sequence layout") {
  const auto conv1 = make_conv({{C, "i like dogs"}});
  Vocabulary v = Vocabulary::build({conv1});
  auto b = assemble_sequence(conv1, v, 1600);
  CHECK(b.length() == 3);
  REQUIRE(b.spans.size() == 1);
  CHECK(b.spans[0] == std::pair<std::size_t, std::size_t>{0, 3});

  const auto conv2 = make_conv({{I, "do you like"}, {C, "yes much"}});
  v = Vocabulary::build({conv2});
  b = assemble_sequence(conv2, v, 1600);
  CHECK(b.length() == 6);
  CHECK(b.token_ids[3] == Vocabulary::kSep);
  REQUIRE(b.spans.size() == 2);
  CHECK(b.spans[0] == std::pair<std::size_t, std::size_t>{0, 3});
  CHECK(b.spans[1] == std::pair<std::size_t, std::size_t>{4, 6});
  CHECK(b.segment_ids == std::vector<std::size_t>{0, 0, 0, 0, 1, 1});
}

TEST_CASE("all-interlocutor conversation has segment 0 throughout") {
  const auto conv = make_conv({{I, "hello there"}, {I, "how are you"}, {I, "fine"}});
  const auto b = assemble_sequence(conv, Vocabulary::build({conv}), 1600);
  CHECK(std::all_of(b.segment_ids.begin(), b.segment_ids.end(), [](std::size_t s) { return s == 0; }));
}

TEST_CASE("unknown tokens and empty responses map to UNK") {
  const auto known = make_conv({{C, "cats"}});
  const auto conv = make_conv({{C, "cats dogs"}, {I, ""}});
  const auto b = assemble_sequence(conv, Vocabulary::build({known}), 1600);
  CHECK(b.token_ids == std::vector<std::size_t>{3, Vocabulary::kUnk, Vocabulary::kSep, Vocabulary::kUnk});
  CHECK(b.spans.back() == std::pair<std::size_t, std::size_t>{3, 4});
  CHECK_THROWS_AS(assemble_sequence(Conversation{}, Vocabulary{}, 10), ContractError);
}

TEST_CASE("truncation drops whole responses from the tail") {
  set_log_level(LogLevel::Quiet);
  const auto conv = make_conv({{I, "a b c"}, {C, "d e"}, {I, "f g h i"}});
  const Vocabulary v = Vocabulary::build({conv});
  auto b = assemble_sequence(conv, v, 7);
  CHECK(b.length() == 6);
  CHECK(b.spans.size() == 2);
  CHECK(b.dropped_responses == 1);
  b = assemble_sequence(conv, v, 2);
  CHECK(b.length() == 2);
  CHECK(b.spans.size() == 1);
  CHECK(b.dropped_responses == 2);
  set_log_level(LogLevel::Warn);
}

TEST_CASE("window layout") {
  auto w = window_layout(300, 256, 128);
  REQUIRE(w.size() == 2);
  CHECK(w[0].begin == 0);
  CHECK(w[0].end == 256);
  CHECK(w[1].begin == 128);
  CHECK(w[1].end == 300);
  CHECK(window_layout(256, 256, 128).size() == 1);
  CHECK(window_layout(257, 256, 128).size() == 2);
  CHECK(window_layout(1, 256, 128).size() == 1);
}

TEST_CASE("span properties over random conversations") {
  const auto convs = fixtures::synth(60, 3);
  const Vocabulary v = Vocabulary::build(convs);
  for (std::size_t max_tokens : {1600ul, 40ul}) {
    set_log_level(LogLevel::Quiet);
    for (const auto& c : convs) {
      const auto b = assemble_sequence(c, v, max_tokens);
      CHECK(b.token_ids.size() == b.segment_ids.size());
      CHECK(b.length() <= max_tokens);
      std::vector<bool> covered(b.length(), false);
      std::size_t prev_end = 0;
      for (std::size_t k = 0; k < b.spans.size(); ++k) {
        auto [s, e] = b.spans[k];
        CHECK(s < e);
        CHECK(e <= b.length());
        CHECK(s >= prev_end);
        prev_end = e;
        for (std::size_t i = s; i < e; ++i) {
          covered[i] = true;
          CHECK(b.token_ids[i] != Vocabulary::kSep);
        }
      }
      for (std::size_t i = 0; i < b.length(); ++i)
        if (!covered[i]) CHECK(b.token_ids[i] == Vocabulary::kSep);
      CHECK(b.spans.size() + b.dropped_responses == c.responses.size());
    }
    set_log_level(LogLevel::Warn);
  }
}

TEST_CASE("vocabulary file round trip") {
  const auto convs = fixtures::synth(5, 1);
  const Vocabulary v = Vocabulary::build(convs);
  const auto path = std::filesystem::temp_directory_path() / "convgrade_vocab_test.txt";
  v.save(path);
  const Vocabulary w = Vocabulary::load(path);
  REQUIRE(w.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(w.token(i) == v.token(i));
  CHECK(w.token(0) == "<pad>");
  CHECK(w.token(1) == "<unk>");
  CHECK(w.token(2) == "<sep>");
  std::filesystem::remove(path);
}

TEST_CASE("encode shapes and limits") {
  ParamStore store;
  Rng rng(1);
  SequenceEncoder enc(small_cfg(10), store, rng);
  CHECK(run(enc, store, raw_batch({4}, {1})).shape() == Shape{1, 6});
  CHECK(run(enc, store, raw_batch({4, 5, 6}, {1, 1, 0})).shape() == Shape{3, 6});
  std::vector<std::size_t> long_ids(401, 3), long_segs(401, 0);
  Tape t;
  CHECK_THROWS_AS(enc.encode(t, store, raw_batch(long_ids, long_segs)), ContractError);
}

TEST_CASE("overlapping window rows are the average of both windows") {
  ParamStore store;
  Rng rng(2);
  SequenceEncoder enc(small_cfg(20), store, rng);
  std::mt19937_64 g(5);
  std::vector<std::size_t> ids(300), segs(300);
  for (std::size_t i = 0; i < 300; ++i) {
    ids[i] = 3 + g() % 17;
    segs[i] = g() % 2;
  }
  const Tensor full = run(enc, store, raw_batch(ids, segs));
  // Each window encoded on its own starts its positions at zero, like the window itself.
  const Tensor w1 = run(enc, store, raw_batch({ids.begin(), ids.begin() + 256}, {segs.begin(), segs.begin() + 256}));
  const Tensor w2 = run(enc, store, raw_batch({ids.begin() + 128, ids.end()}, {segs.begin() + 128, segs.end()}));
  double worst = 0;
  for (std::size_t r = 0; r < 300; ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      double expect;
      if (r < 128) {
        expect = w1.at(r, c);
      } else if (r < 256) {
        expect = 0.5 * (w1.at(r, c) + w2.at(r - 128, c));
      } else {
        expect = w2.at(r - 128, c);
      }
      worst = std::max(worst, std::abs(full.at(r, c) - expect));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("symmetric fixture gives equal rows without positions") {
  EncoderConfig cfg = small_cfg(10);
  cfg.position_embeddings = false;
  ParamStore store;
  Rng rng(3);
  SequenceEncoder enc(cfg, store, rng);
  // Tie the two directions and give the projection equal halves.
  for (const char* part : {".wx", ".wh", ".b"}) {
    store.value(store.id(std::string("enc.lstm.bwd") + part)) = store.value(store.id(std::string("enc.lstm.fwd") + part));
  }
  Tensor& w = store.value(enc.projection().w);
  const std::size_t H = cfg.lstm_hidden;
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) w.at(H + r, c) = w.at(r, c);

  const Tensor out = run(enc, store, raw_batch({4, 5, 6, 7, 6, 5, 4}, {0, 1, 1, 0, 1, 1, 0}));
  CHECK(row_diff(out, 1, out, 5) < 1e-12);
  CHECK(row_diff(out, 2, out, 4) < 1e-12);
  CHECK(row_diff(out, 0, out, 6) < 1e-12);
  CHECK(row_diff(out, 1, out, 2) > 1e-6);
}

TEST_CASE("locality across windows") {
  ParamStore store;
  Rng rng(4);
  SequenceEncoder enc(small_cfg(20), store, rng);
  std::vector<std::size_t> ids(300, 5), segs(300, 1);
  for (std::size_t i = 0; i < 300; ++i) ids[i] = 3 + (i * 7) % 17;
  const Tensor base = run(enc, store, raw_batch(ids, segs));

  auto early = ids;
  early[10] = 19;
  const Tensor a = run(enc, store, raw_batch(early, segs));
  for (std::size_t r = 256; r < 300; ++r) CHECK(row_diff(a, r, base, r) == 0.0);
  CHECK(row_diff(a, 10, base, 10) > 0.0);

  auto late = ids;
  late[290] = 19;
  const Tensor b = run(enc, store, raw_batch(late, segs));
  for (std::size_t r = 0; r < 128; ++r) CHECK(row_diff(b, r, base, r) == 0.0);
  CHECK(row_diff(b, 290, base, 290) > 0.0);
}

TEST_CASE("mean_pool and slice_span") {
  Tape t;
  Var rows = t.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  CHECK(mean_pool(rows).value().storage() == std::vector<double>{0.5, 0.5});
  Var same = t.constant(Tensor::matrix({{2, -1}, {2, -1}, {2, -1}}));
  CHECK(mean_pool(same).value().storage() == std::vector<double>{2, -1});

  std::mt19937_64 g(9);
  Tensor x = oracle::random_tensor({5, 3}, g);
  Tensor perm(Shape{5, 3});
  const std::size_t p[5] = {3, 0, 4, 1, 2};
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) perm.at(r, c) = x.at(p[r], c);
  const Tensor m1 = mean_pool(t.constant(x)).value();
  const Tensor m2 = mean_pool(t.constant(perm)).value();
  const Tensor m3 = mean_pool(scale(t.constant(x), -2.5)).value();
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(m1[c] == doctest::Approx(m2[c]).epsilon(1e-14));
    CHECK(m3[c] == doctest::Approx(-2.5 * m1[c]).epsilon(1e-14));
  }
  CHECK_THROWS_AS(mean_pool(t.constant(Tensor(Shape{3}))), ContractError);

  Var hb = t.constant(x);
  CHECK(slice_span(hb, 0, 5).value().storage() == x.storage());
  const Tensor row = slice_span(hb, 2, 3).value();
  CHECK(row.shape() == Shape{1, 3});
  for (std::size_t c = 0; c < 3; ++c) CHECK(row.at(0, c) == x.at(2, c));
  CHECK_THROWS_AS(slice_span(hb, 3, 3), ContractError);
  CHECK_THROWS_AS(slice_span(hb, 4, 6), ContractError);
}

TEST_CASE("encoder gradients match finite differences across windows") {
  EncoderConfig cfg = small_cfg(8, 3, 2);
  cfg.window_len = 4;
  cfg.window_stride = 2;
  cfg.max_tokens = 20;
  ParamStore store;
  Rng rng(6);
  SequenceEncoder enc(cfg, store, rng);
  const auto batch = raw_batch({3, 4, 5, 2, 6, 7, 3}, {0, 0, 0, 0, 1, 1, 1});
  std::mt19937_64 g(1);
  const Tensor target = oracle::random_tensor({7, 3}, g);
  auto f = [&](Tape& t) { return sum(square(sub(enc.encode(t, store, batch), t.constant(target)))); };
  CHECK(oracle::fd_max_rel_error(f, store) < 1e-5);
}
