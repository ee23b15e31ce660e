#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "fpalign/augmentation.hpp"
#include "fpalign/csv.hpp"
#include "fpalign/error.hpp"
#include "fpalign/evaluation.hpp"
#include "fpalign/parallel.hpp"
#include "fpalign/track_retrieval.hpp"
#include "signals.hpp"

using namespace fpalign;
using testsupport::dominant_frequency;
using testsupport::rms;
using testsupport::sine;

namespace {

AudioBuffer impulse(std::size_t n, double sample_rate = 16000.0) {
  AudioBuffer a;
  a.sample_rate = sample_rate;
  a.samples.assign(n, 0.0f);
  a.samples[0] = 1.0f;
  return a;
}

AudioBuffer middle(const AudioBuffer& a, double skip_seconds) {
  AudioBuffer out;
  out.sample_rate = a.sample_rate;
  const auto s = static_cast<std::size_t>(skip_seconds * a.sample_rate);
  out.samples.assign(a.samples.begin() + static_cast<std::ptrdiff_t>(s),
                     a.samples.end() - static_cast<std::ptrdiff_t>(s));
  return out;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_refs(const std::filesystem::path& dir, std::size_t n, double seconds) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < n; ++i) {
    write_wav(testsupport::note_mixture(100 + i, seconds), dir / ("track" + std::to_string(i) + ".wav"));
  }
}

bool all_in_range(const AudioBuffer& a) {
  return std::all_of(a.samples.begin(), a.samples.end(),
                     [](float v) { return std::isfinite(v) && v >= -1.0f && v <= 1.0f; });
}

}  // namespace

TEST_SUITE("augmentation") {
  TEST_CASE("time stretch lengths") {
    const auto a = sine(440, 16000, 10.0);
    CHECK(time_stretch(a, 1.0).samples == a.samples);
    const auto s = time_stretch(a, 1.25);
    CHECK(std::abs(static_cast<double>(s.samples.size()) - 128000.0) <= 1024.0);
    CHECK(s.duration() == doctest::Approx(8.0).epsilon(0.01));
    for (double r : {0.5, 0.7, 1.3, 2.0}) {
      const auto back = time_stretch(time_stretch(a, r), 1.0 / r);
      CHECK(std::abs(static_cast<double>(back.samples.size()) - 160000.0) <= 2048.0);
    }
    CHECK_THROWS_AS(time_stretch(a, 0.3), Error);
    CHECK_THROWS_AS(time_stretch(a, 2.5), Error);
  }

  TEST_CASE("time stretch preserves pitch") {
    const auto s = time_stretch(sine(440, 16000, 4.0), 0.8);
    const double f = dominant_frequency(middle(s, 0.5).samples, 16000, 200, 1000);
    CHECK(std::abs(f - 440.0) <= 4.4);
  }

  TEST_CASE("pitch shift moves the dominant frequency") {
    const auto a = sine(440, 16000, 3.0);
    const auto up5 = pitch_shift(a, 5.0);
    CHECK(up5.samples.size() == a.samples.size());
    const double f5 = dominant_frequency(middle(up5, 0.4).samples, 16000, 200, 1500);
    CHECK(std::abs(f5 - 587.33) <= 5.87);
    const auto up12 = pitch_shift(a, 12.0);
    const double f12 = dominant_frequency(middle(up12, 0.4).samples, 16000, 200, 1500);
    CHECK(std::abs(f12 - 880.0) <= 8.8);
    const auto same = pitch_shift(a, 0.0);
    CHECK(same.samples == a.samples);
    CHECK_THROWS_AS(pitch_shift(a, 13.0), Error);
  }

  TEST_CASE("biquad responses") {
    const auto hi = sine(3000, 16000, 2.0);
    const auto lp = biquad_filter(hi, FilterMode::LowPass, 0.0, 1500.0);
    CHECK(testsupport::db(rms(middle(lp, 0.2).samples) / rms(middle(hi, 0.2).samples)) <= -12.0);

    const auto mid = sine(1000, 16000, 2.0);
    const auto bp = biquad_filter(mid, FilterMode::BandPass, 300.0, 1800.0);
    CHECK(std::abs(testsupport::db(rms(middle(bp, 0.2).samples) / rms(middle(mid, 0.2).samples))) <= 2.0);

    const auto low = sine(200, 16000, 2.0);
    const auto hp = biquad_filter(low, FilterMode::HighPass, 1800.0, 0.0);
    CHECK(testsupport::db(rms(middle(hp, 0.2).samples) / rms(middle(low, 0.2).samples)) <= -12.0);

    CHECK_THROWS_AS(biquad_filter(mid, FilterMode::LowPass, 0.0, 9000.0), Error);
    CHECK_THROWS_AS(biquad_filter(mid, FilterMode::BandPass, 1800.0, 300.0), Error);
  }

  TEST_CASE("noise mixing hits the target snr") {
    const auto sig = sine(440, 16000, 3.0, 0.3);
    const auto noise = testsupport::white_noise(16000, 1.3, 0.05, 4);
    for (double snr : {0.0, 5.0, 10.0, 20.0}) {
      const auto out = add_noise_snr(sig, noise, snr);
      std::vector<float> added(out.samples.size());
      for (std::size_t i = 0; i < added.size(); ++i) added[i] = out.samples[i] - sig.samples[i];
      CHECK(std::abs(testsupport::db(rms(sig.samples) / rms(added)) - snr) <= 0.5);
    }
    const auto clean = add_noise_snr(sig, noise, 40.0);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < sig.samples.size(); ++i) {
      sxy += sig.samples[i] * clean.samples[i];
      sxx += sig.samples[i] * sig.samples[i];
      syy += clean.samples[i] * clean.samples[i];
    }
    CHECK(sxy / std::sqrt(sxx * syy) >= 0.99);
    AudioBuffer silent;
    silent.samples.assign(100, 0.0f);
    CHECK_THROWS_AS(add_noise_snr(sig, silent, 10.0), Error);
  }

  TEST_CASE("rir convolution") {
    const auto x = testsupport::white_noise(16000, 0.5, 0.2, 5);
    const auto delta = impulse(1);
    CHECK(convolve_rir(x, delta, 1.0).samples == x.samples);
    CHECK(convolve_rir(x, delta, 0.4).samples.size() == x.samples.size());

    auto two = impulse(301);
    two.samples[300] = 0.5f;
    const auto y = convolve_rir(x, two, 1.0);
    for (std::size_t n = 0; n < x.samples.size(); ++n) {
      const double want = x.samples[n] + (n >= 300 ? 0.5 * x.samples[n - 300] : 0.0);
      CHECK(y.samples[n] == doctest::Approx(want).epsilon(1e-6));
    }

    Rng rng(6);
    AudioBuffer long_rir;
    long_rir.samples.resize(4000);
    for (auto& v : long_rir.samples) v = static_cast<float>(0.01 * gaussian(rng));
    long_rir.samples[0] = 1.0f;
    const auto z = convolve_rir(x, long_rir, 0.7);
    CHECK(z.samples.size() == x.samples.size());
    CHECK(all_in_range(z));
    CHECK_THROWS_AS(convolve_rir(x, AudioBuffer{}, 1.0), Error);
  }

  TEST_CASE("echo") {
    const auto e = echo(impulse(4000), 100.0, 0.5);
    CHECK(e.samples[0] == 1.0f);
    CHECK(e.samples[1600] == 0.5f);
    for (std::size_t i = 1; i < e.samples.size(); ++i) {
      if (i != 1600) CHECK(e.samples[i] == 0.0f);
    }
    const auto x = testsupport::white_noise(16000, 1.0, 0.1, 7);
    CHECK(echo(x, 150.0, 0.0).samples == x.samples);

    const auto y = echo(x, 150.0, 0.5);
    std::size_t best_lag = 0;
    double best = -1.0;
    for (std::size_t lag = 100; lag < 4000; ++lag) {
      double acc = 0.0;
      for (std::size_t i = lag; i < y.samples.size(); ++i) acc += y.samples[i] * y.samples[i - lag];
      if (acc > best) best = acc, best_lag = lag;
    }
    CHECK(std::abs(static_cast<double>(best_lag) - 2400.0) <= 1.0);
    CHECK_THROWS_AS(echo(x, 5.0), Error);
  }

  TEST_CASE("every augmentation is deterministic and stays in range") {
    const auto a = testsupport::note_mixture(8, 3.0);
    for (int k = 0; k <= static_cast<int>(AugmentationKind::Echo); ++k) {
      AugmentationSpec spec;
      spec.kind = static_cast<AugmentationKind>(k);
      spec.name = to_string(spec.kind);
      const AugmentationSources sources(spec, 16000, 3);
      Rng r1(11), r2(11);
      const auto x = apply_augmentation(a, spec, sources, r1);
      const auto y = apply_augmentation(a, spec, sources, r2);
      CHECK(x.audio.samples == y.audio.samples);
      CHECK(x.params == y.params);
      CHECK(all_in_range(x.audio));
      if (spec.kind == AugmentationKind::TimeStretch) {
        CHECK(static_cast<double>(x.audio.samples.size()) ==
              doctest::Approx(static_cast<double>(a.samples.size()) / x.speed).epsilon(0.001));
      }
    }
  }

  TEST_CASE("augmentation kinds and condition files") {
    for (int k = 0; k <= static_cast<int>(AugmentationKind::Echo); ++k) {
      const auto kind = static_cast<AugmentationKind>(k);
      CHECK(parse_augmentation_kind(to_string(kind)) == kind);
    }
    CHECK_THROWS_AS(parse_augmentation_kind("chorus"), Error);

    testsupport::TempDir dir("cond");
    std::ofstream(dir / "c.json") << R"([{"name": "fast", "kind": "time_stretch", "params": {"stretch": [1.1, 1.2]}},
                                        {"kind": "noise", "snr_db": 5}])";
    const auto specs = read_condition_file(dir / "c.json");
    REQUIRE(specs.size() == 2);
    CHECK(specs[0].label() == "fast");
    CHECK(specs[0].stretch.lo == 1.1);
    CHECK(specs[1].label() == "noise");
    CHECK(specs[1].snr_db == std::vector<double>{5.0});

    std::ofstream(dir / "bad.json") << R"([{"kind": "time_stretch", "stretch": [1.5, 1.1]}])";
    CHECK_THROWS_AS(read_condition_file(dir / "bad.json"), Error);
    std::ofstream(dir / "obj.json") << R"({"kind": "none"})";
    CHECK_THROWS_AS(read_condition_file(dir / "obj.json"), Error);
  }

  TEST_CASE("wav io") {
    testsupport::TempDir dir("wav");
    const auto a = testsupport::note_mixture(9, 1.0);
    write_wav(a, dir / "f.wav", WavEncoding::Float32);
    CHECK(read_wav(dir / "f.wav").samples == a.samples);
    write_wav(a, dir / "p.wav", WavEncoding::Pcm16);
    const auto p = read_wav(dir / "p.wav");
    REQUIRE(p.samples.size() == a.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(std::abs(p.samples[i] - a.samples[i]) <= 1.0 / 32768.0);

    auto bytes = slurp(dir / "p.wav");
    bytes[20] = 2;  // ADPCM format tag
    std::ofstream(dir / "c.wav", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    try {
      read_wav(dir / "c.wav");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Format);
    }
  }

  TEST_CASE("resampling keeps a tone's frequency") {
    const auto a = sine(1000, 16000, 1.0);
    const auto r = resample(a, 22050);
    CHECK(r.sample_rate == 22050);
    CHECK(std::abs(static_cast<double>(r.samples.size()) - 22050.0) <= 1.0);
    CHECK(std::abs(dominant_frequency(middle(r, 0.1).samples, 22050, 500, 2000) - 1000.0) <= 2.0);
  }

  TEST_CASE("track query set") {
    testsupport::TempDir dir("qset");
    write_refs(dir / "refs", 3, 12.0);
    AugmentationSpec none;
    none.name = "clean";
    AugmentationSpec noisy;
    noisy.kind = AugmentationKind::Noise;
    noisy.name = "noise";
    const std::vector<AugmentationSpec> conds{none, noisy};
    QuerySetOptions opt;
    opt.n_per_condition = 3;
    opt.seed = 17;
    const auto r1 = make_query_set(dir / "refs", conds, opt, dir / "out1");
    set_thread_count(1);
    const auto r2 = make_query_set(dir / "refs", conds, opt, dir / "out2");
    set_thread_count(0);
    REQUIRE(r1.queries.size() == 6);
    CHECK(slurp(r1.manifest) == slurp(r2.manifest));
    for (std::size_t i = 0; i < r1.queries.size(); ++i) {
      CHECK(slurp(r1.queries[i]) == slurp(r2.queries[i]));
    }

    const auto rows = read_track_manifest(r1.manifest);
    REQUIRE(rows.size() == 6);
    for (const auto& row : rows) {
      if (row.condition != "clean") continue;
      const auto q = read_wav(row.query_path);
      const auto ref = read_wav(dir / "refs" / (row.truth_track_id + ".wav"));
      CHECK(q.samples.size() == 160000);
      auto it = std::search(ref.samples.begin(), ref.samples.end(), q.samples.begin(), q.samples.end());
      CHECK(it != ref.samples.end());
    }
  }

  TEST_CASE("short references are skipped") {
    testsupport::TempDir dir("qshort");
    write_refs(dir / "refs", 2, 12.0);
    write_wav(sine(440, 16000, 3.0), dir / "refs" / "short.wav");
    QuerySetOptions opt;
    opt.n_per_condition = 4;
    const std::vector<AugmentationSpec> conds{AugmentationSpec{.name = "none"}};
    const auto r = make_query_set(dir / "refs", conds, opt, dir / "out");
    CHECK(r.warnings.size() == 1);
    for (const auto& row : read_track_manifest(r.manifest)) CHECK(row.truth_track_id != "short");
  }

  TEST_CASE("segment query set ground truth tiles the query") {
    testsupport::TempDir dir("qseg");
    write_refs(dir / "refs", 4, 25.0);
    AugmentationSpec fast;
    fast.name = "fast";
    fast.kind = AugmentationKind::TimeStretch;
    fast.stretch = {1.25, 1.25};
    QuerySetOptions opt;
    opt.mode = QuerySetMode::Segment;
    opt.n_per_condition = 6;
    opt.max_snippets = 3;
    opt.seed = 3;
    const std::vector<AugmentationSpec> conds{fast};
    const auto r = make_query_set(dir / "refs", conds, opt, dir / "out");
    const auto gt = read_annotations_csv(r.ground_truth);
    std::map<std::string, std::vector<Annotation>> by_query;
    for (const auto& g : gt) by_query[g.qry_id].push_back(g);
    CHECK(by_query.size() == 6);
    bool saw_multi = false;
    for (auto& [id, rows] : by_query) {
      const auto q = read_wav(dir / "out" / "queries" / (id + ".wav"));
      std::sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) { return x.q_start < y.q_start; });
      CHECK(rows.front().q_start == doctest::Approx(0.0));
      CHECK(rows.back().q_end == doctest::Approx(q.duration()).epsilon(1e-4));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].q_end - rows[i].q_start == doctest::Approx(8.0).epsilon(1e-3));
        CHECK(rows[i].r_end - rows[i].r_start == doctest::Approx(10.0).epsilon(1e-9));
        if (i > 0) CHECK(rows[i].q_start == doctest::Approx(rows[i - 1].q_end));
      }
      if (rows.size() > 1) saw_multi = true;
      std::set<std::string> refs;
      for (const auto& row : rows) refs.insert(row.ref_id);
      CHECK(refs.size() == rows.size());
    }
    CHECK(saw_multi);
  }
}
