#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "condensa/error.hpp"
#include "condensa/memory.hpp"
#include "condensa/store.hpp"
#include "test_support.hpp"

using namespace condensa;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<double>> random_embeddings(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& v : out)
    for (double& x : v) x = nd(rng);
  return out;
}

CondensedExemplar make_exemplar(Rng& rng, std::uint32_t label, bool quantized, std::size_t frames = 1,
                                std::size_t c = 3, std::size_t h = 4, std::size_t w = 5) {
  CondensedExemplar ex;
  ex.label = label;
  ex.frames = frames;
  ex.channels = c;
  ex.height = h;
  ex.width = w;
  ex.quantized = quantized;
  const std::size_t n = frames * c * h * w;
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  if (quantized) {
    for (std::size_t i = 0; i < n; ++i) ex.bytes.push_back(static_cast<std::uint8_t>(byte(rng)));
  } else {
    for (std::size_t i = 0; i < n; ++i) ex.values.push_back(unit(rng));
  }
  ex.weights_audit = {0.25f, 0.5f, 0.125f, 0.125f};
  return ex;
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "condensa_unit_memory";
  fs::create_directories(dir);
  return dir / name;
}

ModelParams small_model(std::uint64_t seed) { return extend_head(ModelParams::init(3, 0.125, seed), 4, seed); }

}  // namespace

TEST_CASE("herding: m = 1 picks the embedding closest to the mean") {
  const std::vector<std::vector<double>> x = {{0, 0}, {4, 4}, {1, 1}, {3, 3}, {10, 10}};
  // mean (3.6, 3.6): closest is index 1 (4,4)
  CHECK(herding_select(x, 1) == std::vector<std::size_t>{1});
}

TEST_CASE("herding: identical embeddings select in index order") {
  const std::vector<std::vector<double>> x(6, std::vector<double>{0.3, -1.0, 2.0});
  CHECK(herding_select(x, 4) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(herding_select(x, 0).empty());
}

TEST_CASE("herding: matches the exhaustive greedy oracle") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng = make_rng(seed, 1);
    const std::size_t n = testsupport::uniform_size(rng, 1, 8);
    const std::size_t m = testsupport::uniform_size(rng, 1, std::min<std::size_t>(n, 4));
    const auto x = random_embeddings(rng, n, 5);
    CHECK(herding_select(x, m) == testsupport::brute_force_herding(x, m));
  }
  Rng rng = make_rng(99);
  const auto x = random_embeddings(rng, 6, 16);
  CHECK(herding_select(x, 3) == testsupport::brute_force_herding(x, 3));
}

TEST_CASE("herding: errors") {
  const std::vector<std::vector<double>> x = {{1.0}, {2.0}};
  CHECK_THROWS_AS(herding_select(x, 3), DomainError);
  const std::vector<std::vector<double>> ragged = {{1.0}, {2.0, 3.0}};
  CHECK_THROWS_AS(herding_select(ragged, 1), DimensionError);
}

TEST_CASE("memory budget rows") {
  struct Row {
    std::uint64_t frames;
    std::uint64_t bytes;
    const char* mb;
  };
  for (const Row& r : {Row{1, 150528, "0.15"}, Row{2, 301056, "0.30"}, Row{5, 752640, "0.75"},
                       Row{8, 1204224, "1.2"}, Row{16, 2408448, "2.4"}, Row{40, 6021120, "6.0"}}) {
    const MemoryBudget b = memory_bytes(r.frames, 224, 224, 3);
    CHECK(b.bytes == r.bytes);
    CHECK(b.megabytes == doctest::Approx(r.bytes / 1e6));
    CHECK(format_megabytes(b.megabytes) == r.mb);
  }
  CHECK(memory_bytes(3, 32, 32, 3).bytes == 3 * memory_bytes(1, 32, 32, 3).bytes);
  CHECK(format_megabytes(0.1505) == "0.15");
  CHECK(format_megabytes(0.301) == "0.30");
  CHECK(format_megabytes(6.02) == "6.0");
  CHECK(format_megabytes(12.04) == "12");
}

TEST_CASE("memory bank") {
  Rng rng = make_rng(2);
  MemoryBank bank(2);
  CHECK(bank.empty());
  bank.insert(make_exemplar(rng, 3, true));
  bank.insert(make_exemplar(rng, 1, true));
  bank.insert(make_exemplar(rng, 3, false));
  CHECK(bank.size() == 3);
  CHECK(bank.has_class(1));
  CHECK_FALSE(bank.has_class(2));
  CHECK_THROWS_AS(bank.insert(make_exemplar(rng, 3, true)), DomainError);
  const auto entries = bank.entries();
  CHECK(entries[0]->label == 1);
  CHECK(entries[1]->label == 3);
  CHECK(entries[1]->quantized);
  CHECK_FALSE(entries[2]->quantized);
  CHECK(bank.bytes() == 60 + 60 + 240);

  const std::uint64_t h = entries[0]->pixel_hash();
  bank.insert(make_exemplar(rng, 5, true));
  CHECK(bank.entries()[0]->pixel_hash() == h);
}

TEST_CASE("FMEX container: empty bank and header corruption") {
  const fs::path path = temp_file("empty.fmex");
  fmex::store(MemoryBank(2), path);
  const auto bytes = fmex::read_file(path);
  CHECK(bytes.size() == 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "FMEX");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(fmex::load(path).empty());

  auto bad = bytes;
  bad[0] = 'X';
  try {
    fmex::decode_container(bad);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
  bad = bytes;
  bad[4] = 2;
  try {
    fmex::decode_container(bad);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 4);
  }
  CHECK_THROWS_AS(fmex::decode_container(std::span(bytes).first(5)), FormatError);
}

TEST_CASE("FMEX: mixed bank round-trips bit-exact") {
  Rng rng = make_rng(3);
  MemoryBank bank(3);
  for (std::uint32_t c : {0u, 4u, 7u})
    for (int i = 0; i < 3; ++i) {
      auto ex = make_exemplar(rng, c, (i + c) % 2 == 0, i == 2 ? 3 : 1);
      bank.insert(std::move(ex));
    }
  const fs::path path = temp_file("mixed.fmex");
  fmex::store(bank, path);
  const MemoryBank back = fmex::load(path);
  CHECK(back.same_content(bank));
  CHECK(back.videos_per_class() == 3);
  const auto a = bank.entries(), b = back.entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->bytes == b[i]->bytes);
    CHECK(a[i]->values == b[i]->values);
    CHECK(a[i]->frames == b[i]->frames);
    CHECK(a[i]->weights_audit == b[i]->weights_audit);
  }

  fmex::store(back, temp_file("mixed2.fmex"));
  CHECK(fmex::read_file(path) == fmex::read_file(temp_file("mixed2.fmex")));
}

TEST_CASE("FMEX: every byte value survives a round trip") {
  CondensedExemplar ex;
  ex.label = 9;
  ex.channels = 1;
  ex.height = 16;
  ex.width = 16;
  ex.bytes.resize(256);
  std::iota(ex.bytes.begin(), ex.bytes.end(), 0);
  ex.weights_audit = {1.0f};
  const auto payload = fmex::encode_exemplar(ex);
  const auto back = fmex::decode_exemplar(payload);
  CHECK(back.bytes == ex.bytes);
  CHECK(back.same_content(ex));
  const Tensor t = back.to_tensor();
  for (int b = 0; b < 256; ++b) CHECK(quantize_unit(t[b]) == b);
}

TEST_CASE("FMEX: exemplar payload layout") {
  CondensedExemplar ex;
  ex.label = 0x01020304;
  ex.channels = 2;
  ex.height = 1;
  ex.width = 3;
  ex.bytes = {1, 2, 3, 4, 5, 6};
  ex.weights_audit = {0.5f, 0.5f};
  const auto p = fmex::encode_exemplar(ex);
  CHECK(p.size() == 4 + 1 + 2 + 2 + 1 + 2 + 8 + 6);
  CHECK(p[0] == 4);
  CHECK(p[3] == 1);
  CHECK(p[4] == 2);
  CHECK(p[5] == 1);
  CHECK(p[7] == 3);
  CHECK(p[9] == 1);
  CHECK(p[10] == 2);
  CHECK(std::vector<std::uint8_t>(p.end() - 6, p.end()) == ex.bytes);

  auto bad = p;
  bad[9] = 7;
  CHECK_THROWS_AS(fmex::decode_exemplar(bad), FormatError);
  CHECK_THROWS_AS(fmex::decode_exemplar(std::span(p).first(p.size() - 1)), FormatError);
}

TEST_CASE("FMEX: params round trip and clip dumps") {
  const ModelParams p = small_model(4);
  const fs::path path = temp_file("params.fmex");
  fmex::store_params(p, path);
  const ModelParams q = fmex::load_params(path);
  CHECK(q.shift_fold == p.shift_fold);
  const auto a = p.parameters(), b = q.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].shape() == b[i].shape());
    CHECK(std::equal(a[i].data().begin(), a[i].data().end(), b[i].data().begin()));
  }

  SynthSpec spec;
  spec.height = spec.width = 12;
  spec.frames = 4;
  std::vector<VideoClip> clips = {render_clip(spec, class_params(0), 1), render_clip(spec, class_params(5), 2)};
  clips[0].label = 0;
  clips[1].label = 5;
  fmex::store_clips(clips, temp_file("clips.fmex"));
  const auto back = fmex::load_clips(temp_file("clips.fmex"));
  REQUIRE(back.size() == 2);
  CHECK(back[0].pixels == clips[0].pixels);
  CHECK(back[1].pixels == clips[1].pixels);
  CHECK(back[1].label == 5);
  CHECK(back[1].frames == 4);
}

TEST_CASE("class means") {
  const ModelParams p = small_model(5);
  Rng rng = make_rng(5);
  MemoryBank bank(5);
  std::vector<CondensedExemplar> exs;
  for (int i = 0; i < 5; ++i) exs.push_back(make_exemplar(rng, 2, true, 1, 3, 6, 6));
  exs.push_back(make_exemplar(rng, 1, true, 1, 3, 6, 6));
  for (const auto& e : exs) bank.insert(e);
  const auto means = class_means(bank, p, 4);
  REQUIRE(means.size() == 2);

  const auto single = testsupport::naive_embedding(testsupport::replicate_frame(
                                                       exs[5].to_tensor().reshaped({3, 6, 6}), 4),
                                                   p);
  for (std::size_t d = 0; d < kEmbeddingDim; ++d) CHECK(means.at(1)[d] == doctest::Approx(single[d]).epsilon(1e-12));

  std::vector<double> mean(kEmbeddingDim, 0.0);
  for (int i = 0; i < 5; ++i) {
    const auto e = testsupport::naive_embedding(
        testsupport::replicate_frame(exs[i].to_tensor().reshaped({3, 6, 6}), 4), p);
    for (std::size_t d = 0; d < kEmbeddingDim; ++d) mean[d] += e[d] / 5.0;
  }
  for (std::size_t d = 0; d < kEmbeddingDim; ++d) CHECK(means.at(2)[d] == doctest::Approx(mean[d]).epsilon(1e-12));

  const auto multi = make_exemplar(rng, 0, true, 4, 3, 6, 6);
  const auto emb = exemplar_embedding(multi, p, 4);
  const auto ref = testsupport::naive_embedding(multi.to_tensor(), p);
  for (std::size_t d = 0; d < kEmbeddingDim; ++d) CHECK(emb[d] == doctest::Approx(ref[d]).epsilon(1e-12));
}
