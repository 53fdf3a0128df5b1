#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>

#include "tdodif/ingest.hpp"
#include "test_util.hpp"

using namespace tdodif;
using tdodif::test::TempDir;

TEST_CASE("label PNG round trip and decode") {
    TempDir tmp("label");
    LabelMap m(2, 2, 3);
    m.at(0, 0) = 0;
    m.at(1, 0) = 1;
    m.at(0, 1) = 2;
    m.at(1, 1) = 3;
    write_label_png(m, tmp.file("m.png"));
    LabelMap back = read_label_png(tmp.file("m.png"), 3);
    CHECK(back == m);
}

TEST_CASE("label PNG rejects wrong depth and channels") {
    TempDir tmp("labelbad");
    // 16-bit grayscale
    png::write(tmp.file("deep.png"), 2, 2, 1, 16, std::vector<uint8_t>(8, 0));
    CHECK_THROWS_WITH_AS(read_label_png(tmp.file("deep.png"), 3),
                         doctest::Contains("8-bit"), FormatError);
    // RGB
    png::write(tmp.file("rgb.png"), 2, 2, 3, 8, std::vector<uint8_t>(12, 0));
    CHECK_THROWS_WITH_AS(read_label_png(tmp.file("rgb.png"), 3),
                         doctest::Contains("single-channel"), FormatError);
}

TEST_CASE("PRB1 round trip, decode, and strict sum check") {
    TempDir tmp("prb");
    ProbMap p(1, 1, 2);
    p.at(0, 0, 0) = 0.4f;
    p.at(1, 0, 0) = 0.6f;
    write_prob(p, tmp.file("p.prb"));
    ProbMap back = read_prob(tmp.file("p.prb"));
    CHECK(back == p);

    ProbMap bad(1, 1, 2);
    bad.at(0, 0, 0) = 0.4f;
    bad.at(1, 0, 0) = 0.4f;
    write_prob(bad, tmp.file("bad.prb"));
    size_t violations = 0;
    (void)read_prob(tmp.file("bad.prb"), true, false, 1e-3, &violations);
    CHECK(violations == 1);
    CHECK_THROWS_AS(read_prob(tmp.file("bad.prb"), true, true), FormatError);
}

TEST_CASE("PRB1 bad magic and truncation") {
    TempDir tmp("prbbad");
    std::ofstream(tmp.file("x.prb"), std::ios::binary) << "NOPE";
    CHECK_THROWS_AS(read_prob(tmp.file("x.prb")), FormatError);
    {
        std::ofstream f(tmp.file("t.prb"), std::ios::binary);
        f << "PRB1";
        uint32_t dims[3] = {2, 2, 1};
        f.write(reinterpret_cast<char*>(dims), 12);
        float one = 1.0f;
        f.write(reinterpret_cast<char*>(&one), 4);  // 3 floats short
    }
    CHECK_THROWS_AS(read_prob(tmp.file("t.prb")), FormatError);
}

TEST_CASE("CNF1 round trip and clamping") {
    TempDir tmp("cnf");
    ConfidenceMap m(1, 1);
    m.at(0, 0) = 0.7f;
    write_conf(m, tmp.file("c.cnf"));
    size_t clamped = 9;
    ConfidenceMap back = read_conf(tmp.file("c.cnf"), &clamped);
    CHECK(back.at(0, 0) == doctest::Approx(0.7f));
    CHECK(clamped == 0);

    // out-of-range values clamp with a count
    std::vector<uint8_t> raw = {'C', 'N', 'F', '1', 1, 0, 0, 0, 2, 0, 0, 0};
    float vals[2] = {1.3f, -0.1f};
    const uint8_t* vb = reinterpret_cast<const uint8_t*>(vals);
    raw.insert(raw.end(), vb, vb + 8);
    std::ofstream(tmp.file("clamp.cnf"), std::ios::binary)
        .write(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    ConfidenceMap cm = read_conf(tmp.file("clamp.cnf"), &clamped);
    CHECK(clamped == 2);
    CHECK(cm.at(0, 0) == 1.0f);
    CHECK(cm.at(0, 1) == 0.0f);
}

TEST_CASE(".flo decode, bad magic, truncation") {
    TempDir tmp("flo");
    FlowField f(1, 1);
    f.u.at(0, 0) = 2.0f;
    f.v.at(0, 0) = -1.0f;
    write_flo(f, tmp.file("f.flo"));
    FlowField back = read_flo(tmp.file("f.flo"));
    CHECK(back.u.at(0, 0) == 2.0f);
    CHECK(back.v.at(0, 0) == -1.0f);

    {
        std::ofstream bad(tmp.file("bad.flo"), std::ios::binary);
        float zero = 0.0f;
        uint32_t one = 1;
        bad.write(reinterpret_cast<char*>(&zero), 4);
        bad.write(reinterpret_cast<char*>(&one), 4);
        bad.write(reinterpret_cast<char*>(&one), 4);
    }
    CHECK_THROWS_AS(read_flo(tmp.file("bad.flo")), FormatError);

    {
        std::ofstream trunc(tmp.file("trunc.flo"), std::ios::binary);
        float magic = kFloMagic;
        uint32_t w = 2, h = 1;
        trunc.write(reinterpret_cast<char*>(&magic), 4);
        trunc.write(reinterpret_cast<char*>(&w), 4);
        trunc.write(reinterpret_cast<char*>(&h), 4);
        float vals[3] = {1, 2, 3};  // needs 4
        trunc.write(reinterpret_cast<char*>(vals), 12);
    }
    CHECK_THROWS_AS(read_flo(tmp.file("trunc.flo")), FormatError);
}

TEST_CASE("binary format round trips on randomized instances") {
    TempDir tmp("rt");
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        int w = 1 + int(rng() % 9), h = 1 + int(rng() % 9), c = 1 + int(rng() % 4);
        ProbMap p = tdodif::test::random_softmax(w, h, c, rng);
        write_prob(p, tmp.file("p.prb"));
        CHECK(read_prob(tmp.file("p.prb")) == p);

        FlowField fl(w, h);
        std::uniform_real_distribution<float> u(-20.0f, 20.0f);
        for (auto& v : fl.u.data) v = u(rng);
        for (auto& v : fl.v.data) v = u(rng);
        write_flo(fl, tmp.file("f.flo"));
        FlowField fb = read_flo(tmp.file("f.flo"));
        CHECK(fb.u == fl.u);
        CHECK(fb.v == fl.v);

        LabelMap m(w, h, 5);
        for (auto& v : m.grid.data) v = uint8_t(rng() % 6);
        write_label_png(m, tmp.file("m.png"));
        CHECK(read_label_png(tmp.file("m.png"), 5) == m);
    }
}

TEST_CASE("manifest parsing, resolution, and invariants") {
    TempDir tmp("man");
    {
        std::ofstream f(tmp.file("m.txt"));
        f << "classes = 2\n";
        f << "class 0 = ignore 0 0 0\n";
        f << "class 1 = road 128 64 128\n";
        f << "class 2 = sky 70 130 180\n";
        f << "a.png\ta.prb\t-\t-\t-\t-\n";
        f << "b.png\tb.prb\tc.prb\tb.flo\tb.cnf\tb_gt.png\n";
    }
    Manifest m = read_manifest(tmp.file("m.txt"));
    REQUIRE(m.entries.size() == 2);
    CHECK(m.num_classes == 2);
    CHECK(m.class_names[1] == "sky");
    CHECK(m.entries[0].flow_path.empty());
    CHECK(!m.entries[1].flow_path.empty());
    // relative paths resolve against the manifest directory
    CHECK(m.entries[1].flow_path == tmp.file("b.flo"));

    {
        std::ofstream f(tmp.file("zero.txt"));
        f << "classes = 0\n";
    }
    CHECK_THROWS_AS(read_manifest(tmp.file("zero.txt")), FormatError);

    {
        std::ofstream f(tmp.file("co.txt"));
        f << "classes = 1\nclass 1 = a 1 2 3\n";
        f << "a.png\ta.prb\tc.prb\t-\t-\t-\n";  // reference without flow
    }
    CHECK_THROWS_WITH_AS(read_manifest(tmp.file("co.txt")),
                         doctest::Contains("co-occur"), FormatError);
}

TEST_CASE("manifest write/read round trip") {
    TempDir tmp("manrt");
    Manifest m;
    m.num_classes = 2;
    m.class_names = {"road", "sky"};
    m.class_palette = {{0, 0, 0}, {128, 64, 128}, {70, 130, 180}};
    ManifestEntry e;
    e.target_image_path = "img.png";
    e.target_prob_path = "img.prb";
    m.entries.push_back(e);
    write_manifest(m, tmp.file("m.txt"));
    Manifest back = read_manifest(tmp.file("m.txt"));
    CHECK(back.num_classes == 2);
    CHECK(back.entries.size() == 1);
    CHECK(back.class_palette[2] == Rgb{70, 130, 180});
}

TEST_CASE("config defaults match the published hyper-parameters") {
    PipelineConfig cfg;
    CHECK(cfg.p == 0.2);
    CHECK(cfg.k == 500);
    CHECK(cfg.mc == 10.0);
    CHECK(cfg.slic_iters == 10);
    CHECK(cfg.t == 0.5);
    CHECK(cfg.alpha_t == 1.0);
    CHECK(cfg.alpha_spa == 0.1);
    CHECK(cfg.alpha_tem == 5.0);
    CHECK(cfg.rounds == 4);
    CHECK(cfg.epochs == 10);
    CHECK(cfg.n_pos == 20);
    CHECK(cfg.n_neg == 1);
    CHECK(cfg.learning_rate == 1e-4);
    CHECK(cfg.batch_size == 2);
}

TEST_CASE("config file parsing and validation") {
    TempDir tmp("cfg");
    {
        std::ofstream f(tmp.file("c.txt"));
        f << "p = 0.3\norder = sd\nseed = 17\n# comment\nrounds = 2\n";
    }
    PipelineConfig cfg = read_config(tmp.file("c.txt"));
    CHECK(cfg.p == 0.3);
    CHECK(cfg.order == DiffusionOrder::SdOnly);
    CHECK(cfg.seed == 17);
    CHECK(cfg.rounds == 2);

    {
        std::ofstream f(tmp.file("bad.txt"));
        f << "p = 1.5\n";
    }
    CHECK_THROWS_AS(read_config(tmp.file("bad.txt")), ConfigError);
    {
        std::ofstream f(tmp.file("unk.txt"));
        f << "wat = 1\n";
    }
    CHECK_THROWS_AS(read_config(tmp.file("unk.txt")), ConfigError);
}
