#include <fstream>

#include "doctest.h"
#include "fpalign/error.hpp"
#include "fpalign/evaluation.hpp"
#include "signals.hpp"

using namespace fpalign;

namespace {

Annotation box(std::string q, std::string r, double qs, double qe, double rs, double re) {
  return {std::move(q), std::move(r), qs, qe, rs, re};
}

std::vector<Annotation> gt_fixture() {
  return {box("q1", "r1", 0, 10, 5, 15), box("q1", "r2", 10, 20, 0, 10), box("q2", "r3", 0, 8, 30, 40),
          box("q3", "r1", 2, 12, 40, 50)};
}

void write_text(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("track f1") {
    const auto gts = gt_fixture();
    CHECK(track_f1(gts, gts).f1 == 100.0);
    CHECK(track_f1(std::vector<Annotation>{}, gts).f1 == 0.0);
    const std::vector<Annotation> preds{box("q1", "r1", 0, 1, 0, 1), box("q1", "r2", 0, 1, 0, 1)};
    const std::vector<Annotation> one{box("q1", "r1", 0, 1, 0, 1)};
    const auto s = track_f1(preds, one);
    CHECK(s.precision == 0.5);
    CHECK(s.recall == 1.0);
    CHECK(round2(s.f1) == 66.67);
  }

  TEST_CASE("track f1 counts distinct pairs") {
    const std::vector<Annotation> preds{box("q", "r", 0, 1, 0, 1), box("q", "r", 5, 6, 5, 6)};
    const std::vector<Annotation> gts{box("q", "r", 0, 1, 0, 1)};
    const auto s = track_f1(preds, gts);
    CHECK(s.counts.tp == 1);
    CHECK(s.counts.fp == 0);
    CHECK(s.f1 == 100.0);
  }

  TEST_CASE("iou") {
    const auto a = box("q", "r", 0, 10, 0, 10);
    CHECK(iou_2d(a, a) == 1.0);
    CHECK(iou_2d(a, box("q", "r", 20, 30, 20, 30)) == 0.0);
    CHECK(iou_2d(a, box("q", "r", 5, 15, 5, 15)) == doctest::Approx(25.0 / 175.0));
    CHECK(round2(iou_2d(a, box("q", "r", 5, 15, 5, 15)) * 100.0) == 14.29);
    try {
      iou_2d(box("q", "r", 3, 3, 0, 1), a);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Degenerate);
    }
  }

  TEST_CASE("bbox f1") {
    const auto gts = gt_fixture();
    CHECK(bbox_f1(gts, gts).f1 == 100.0);

    const std::vector<Annotation> gt1{box("q", "r", 0, 10, 0, 10)};
    const std::vector<Annotation> off{box("q", "r", 8, 18, 8, 18)};
    const auto s = bbox_f1(off, gt1);
    CHECK(s.counts.tp == 0);
    CHECK(s.counts.fp == 1);
    CHECK(s.counts.fn == 1);

    const std::vector<Annotation> two_gts{box("q", "r", 0, 10, 0, 10), box("q", "r", 6, 16, 6, 16)};
    const std::vector<Annotation> pred{box("q", "r", 1, 11, 1, 11)};
    const auto t = bbox_f1(pred, two_gts);
    CHECK(t.counts.tp == 1);
    CHECK(t.counts.fn == 1);
    CHECK(t.counts.fp == 0);
  }

  TEST_CASE("bbox with zero threshold reduces to track f1") {
    const auto gts = gt_fixture();
    auto preds = gts;
    for (auto& p : preds) p.q_start += 0.5, p.q_end += 30.0;
    preds.push_back(box("q9", "r9", 0, 1, 0, 1));
    CHECK(bbox_f1(preds, gts, 0.0).f1 == doctest::Approx(track_f1(preds, gts).f1));
  }

  TEST_CASE("length f1") {
    const std::vector<Annotation> gts{box("q", "r", 0, 5, 0, 5)};
    CHECK(length_f1(gts, gts).f1 == 100.0);
    const std::vector<Annotation> pred{box("q", "r", 0, 10, 0, 10)};
    const auto s = length_f1(pred, gts);
    CHECK(s.precision == 0.5);
    CHECK(s.recall == 1.0);
    CHECK(round2(s.f1) == 66.67);
    const std::vector<Annotation> wrong_ref{box("q", "x", 0, 5, 0, 5)};
    CHECK(length_f1(wrong_ref, gts).matched_seconds == 0.0);
    CHECK(length_f1(wrong_ref, gts).f1 == 0.0);
  }

  TEST_CASE("metrics are bounded and permutation invariant") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<Annotation> gts, preds;
      for (int i = 0; i < 8; ++i) {
        const double qs = uniform(rng, 0, 50), rs = uniform(rng, 0, 50);
        const auto g = box("q" + std::to_string(uniform_index(rng, 3)), "r" + std::to_string(uniform_index(rng, 3)),
                           qs, qs + uniform(rng, 1, 10), rs, rs + uniform(rng, 1, 10));
        gts.push_back(g);
        auto p = g;
        p.q_start += uniform(rng, -3, 3);
        p.q_end = std::max(p.q_start + 0.5, p.q_end + uniform(rng, -3, 3));
        if (uniform01(rng) < 0.3) p.ref_id = "rx";
        preds.push_back(p);
      }
      const auto base = evaluate(preds, gts);
      for (double v : {base.track.f1, base.bbox.f1, base.length.f1}) {
        CHECK(v >= 0.0);
        CHECK(v <= 100.0);
      }
      std::reverse(preds.begin(), preds.end());
      std::rotate(gts.begin(), gts.begin() + 3, gts.end());
      const auto perm = evaluate(preds, gts);
      CHECK(perm.track.f1 == doctest::Approx(base.track.f1));
      CHECK(perm.bbox.f1 == doctest::Approx(base.bbox.f1));
      CHECK(perm.length.f1 == doctest::Approx(base.length.f1));

      auto more = preds;
      more.push_back(gts.front());
      const auto grown = evaluate(more, gts);
      CHECK(grown.track.recall >= base.track.recall);
      CHECK(grown.bbox.recall >= base.bbox.recall);
      CHECK(grown.length.recall >= base.length.recall - 1e-12);
    }
  }

  TEST_CASE("csv runs: perfect, empty and one boundary error") {
    testsupport::TempDir dir("eval");
    const std::string header = "qry_id,ref_id,q_start,q_end,r_start,r_end\n";
    const std::string gt = header + "q1,r1,0,10,0,10\nq2,r2,0,10,20,30\n";
    write_text(dir / "gt.csv", gt);
    write_text(dir / "same.csv", gt);
    write_text(dir / "empty.csv", header);
    write_text(dir / "off.csv", header + "q1,r1,0,10,0,10\nq2,r2,0,12,20,32\n");

    auto j = evaluate_run(dir / "same.csv", dir / "gt.csv").to_json();
    CHECK(j["schema_version"] == 1);
    CHECK(j["track_f1"] == 100.0);
    CHECK(j["bbox_f1"] == 100.0);
    CHECK(j["length_f1"] == 100.0);

    j = evaluate_run(dir / "empty.csv", dir / "gt.csv").to_json();
    CHECK(j["track_f1"] == 0.0);
    CHECK(j["bbox_f1"] == 0.0);
    CHECK(j["length_f1"] == 0.0);

    j = evaluate_run(dir / "off.csv", dir / "gt.csv").to_json();
    CHECK(j["track_f1"] == 100.0);
    CHECK(j["bbox_f1"] == 100.0);
    CHECK(j["length_f1"].get<double>() == doctest::Approx(95.24).epsilon(1e-4));
  }

  TEST_CASE("csv errors name the line") {
    testsupport::TempDir dir("eval_err");
    write_text(dir / "bad.csv", "qry_id,ref_id,q_start,q_end,r_start,r_end\nq,r,0,abc,0,1\n");
    try {
      read_annotations_csv(dir / "bad.csv");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Data);
      CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
    write_text(dir / "rev.csv", "qry_id,ref_id,q_start,q_end,r_start,r_end\nq,r,5,1,0,1\n");
    CHECK_THROWS_AS(read_annotations_csv(dir / "rev.csv"), Error);
    write_text(dir / "cols.csv", "qry,ref\nq,r\n");
    CHECK_THROWS_AS(read_annotations_csv(dir / "cols.csv"), Error);
  }

  TEST_CASE("annotation csv roundtrip") {
    testsupport::TempDir dir("eval_rt");
    const auto gts = gt_fixture();
    write_annotations_csv(gts, dir / "a.csv");
    const auto back = read_annotations_csv(dir / "a.csv");
    REQUIRE(back.size() == gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) {
      CHECK(back[i].qry_id == gts[i].qry_id);
      CHECK(back[i].q_end == doctest::Approx(gts[i].q_end));
      CHECK(back[i].r_start == doctest::Approx(gts[i].r_start));
    }
  }
}
