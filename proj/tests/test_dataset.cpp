#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "core/dataset.hpp"
#include "core/rng.hpp"

using namespace tab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static fs::path dir = [] {
        auto p = fs::temp_directory_path() / "tab_test_dataset";
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// color index recovered from pixel content: red-ish samples have all energy
// in channel 0, green-ish in channel 1
int dominant_channel(const LabeledDataset& ds, size_t i) {
    const size_t hw = static_cast<size_t>(ds.height) * ds.width;
    const float* px = ds.sample(i);
    double best = -1.0;
    int arg = 0;
    for (int c = 0; c < ds.channels; ++c) {
        double sum = 0.0;
        for (size_t j = 0; j < hw; ++j) sum += px[c * hw + j];
        if (sum > best) {
            best = sum;
            arg = c;
        }
    }
    return arg;
}

}  // namespace

TEST_CASE("IDX fixture round-trips exact pixel values") {
    // two 2x3 images, labels 5 and 0, built byte-by-byte
    std::vector<unsigned char> img;
    push_be32(img, 0x00000803);
    push_be32(img, 2);
    push_be32(img, 2);
    push_be32(img, 3);
    const unsigned char pix[12] = {0, 51, 102, 153, 204, 255, 255, 0, 128, 64, 32, 16};
    img.insert(img.end(), pix, pix + 12);
    std::vector<unsigned char> lab;
    push_be32(lab, 0x00000801);
    push_be32(lab, 2);
    lab.push_back(5);
    lab.push_back(0);
    const auto img_path = temp_dir() / "fixture_images.idx";
    const auto lab_path = temp_dir() / "fixture_labels.idx";
    write_bytes(img_path, img);
    write_bytes(lab_path, lab);

    const RawDigits d = import_idx(img_path.string(), lab_path.string());
    REQUIRE(d.size() == 2);
    CHECK(d.height == 2);
    CHECK(d.width == 3);
    CHECK(d.labels[0] == 5);
    CHECK(d.labels[1] == 0);
    for (int j = 0; j < 6; ++j) {
        CHECK(d.pixels[0][j] == pix[j] / 255.0f);
        CHECK(d.pixels[1][j] == pix[6 + j] / 255.0f);
    }
}

TEST_CASE("IDX errors: bad magic, truncation, count mismatch") {
    std::vector<unsigned char> img;
    push_be32(img, 0x00000804);  // wrong magic
    push_be32(img, 1);
    push_be32(img, 1);
    push_be32(img, 1);
    img.push_back(7);
    std::vector<unsigned char> lab;
    push_be32(lab, 0x00000801);
    push_be32(lab, 1);
    lab.push_back(3);
    const auto img_path = temp_dir() / "bad_images.idx";
    const auto lab_path = temp_dir() / "bad_labels.idx";
    write_bytes(img_path, img);
    write_bytes(lab_path, lab);
    CHECK_THROWS_WITH_AS(import_idx(img_path.string(), lab_path.string()),
                         doctest::Contains("bad magic"), std::runtime_error);

    img[3] = 0x03;  // fix magic, then truncate the payload
    img.pop_back();
    write_bytes(img_path, img);
    CHECK_THROWS_WITH_AS(import_idx(img_path.string(), lab_path.string()),
                         doctest::Contains("truncated"), std::runtime_error);

    img.push_back(7);
    write_bytes(img_path, img);
    lab[7] = 2;  // label count 2 vs image count 1
    lab.push_back(1);
    write_bytes(lab_path, lab);
    CHECK_THROWS_WITH_AS(import_idx(img_path.string(), lab_path.string()),
                         doctest::Contains("mismatch"), std::runtime_error);
}

TEST_CASE("even-odd generator is deterministic byte for byte") {
    const auto a = gen_even_odd(300, 120, 0.9, 11);
    const auto b = gen_even_odd(300, 120, 0.9, 11);
    REQUIRE(a.train.size() == b.train.size());
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.train.groups == b.train.groups);
    for (size_t i = 0; i < a.train.size(); ++i) {
        CHECK(*a.train.features[i] == *b.train.features[i]);
    }
    CHECK(a.test.labels == b.test.labels);
}

TEST_CASE("even-odd correlation strength is exact per class") {
    for (double p : {0.5, 0.9, 0.99}) {
        const auto r = gen_even_odd(1200, 240, p, 5);
        for (const LabeledDataset* ds : {&r.train, &r.val}) {
            std::map<int, int> class_size, aligned;
            for (size_t i = 0; i < ds->size(); ++i) {
                const int l = ds->labels[i];
                const int attr = ds->groups[i] % 2;
                ++class_size[l];
                if (attr == l) ++aligned[l];
            }
            for (const auto& [l, n] : class_size) {
                CHECK(aligned[l] == static_cast<int>(std::llround(p * n)));
            }
        }
    }
}

TEST_CASE("even-odd structure: shapes, ranges, group encoding, color content") {
    const auto r = gen_even_odd(400, 160, 0.8, 3);
    CHECK(r.train.num_classes == 2);
    CHECK(r.train.num_groups == 4);
    CHECK(r.train.channels == 3);
    CHECK(r.train.height == 28);
    CHECK(r.train.width == 28);
    CHECK(r.train.split_tag == "train");
    CHECK(r.val.split_tag == "val");
    CHECK(r.test.split_tag == "test");
    for (size_t i = 0; i < r.train.size(); ++i) {
        for (float v : *r.train.features[i]) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        const int label = r.train.labels[i];
        const int attr = r.train.groups[i] % 2;
        CHECK(r.train.groups[i] == label * 2 + attr);
        // red (attr 0) lives in channel 0, green (attr 1) in channel 1
        CHECK(dominant_channel(r.train, i) == attr);
    }
}

TEST_CASE("generated test split is exactly group-balanced") {
    const auto r = gen_even_odd(500, 200, 0.95, 9);
    std::map<int, int> hist;
    for (int g : r.test.groups) ++hist[g];
    REQUIRE(hist.size() == 4);
    int mn = 1 << 30, mx = 0;
    for (const auto& [g, c] : hist) {
        mn = std::min(mn, c);
        mx = std::max(mx, c);
    }
    CHECK(mx - mn == 0);

    const auto c = gen_cmnist(600, 300, 0.9, 2);
    std::map<int, int> chist;
    for (int g : c.test.groups) ++chist[g];
    REQUIRE(chist.size() == 100);
    for (const auto& [g, cnt] : chist) CHECK(cnt == chist.begin()->second);
}

TEST_CASE("even-odd golden histogram: n=1000 p=0.9 seed=7") {
    const auto r = gen_even_odd(1000, 400, 0.9, 7);
    std::map<int, int> hist;
    for (int g : r.train.groups) ++hist[g];
    int cls[2] = {0, 0};
    for (int l : r.train.labels) ++cls[l];
    // frozen from the seeded generator; cross-checked against
    // round(p * class_size)
    CHECK(cls[0] == 480);
    CHECK(cls[1] == 520);
    CHECK(hist[0] == 432);
    CHECK(hist[1] == 48);
    CHECK(hist[2] == 52);
    CHECK(hist[3] == 468);
    CHECK(432 == static_cast<int>(std::llround(0.9 * 480)));
    CHECK(468 == static_cast<int>(std::llround(0.9 * 520)));
}

TEST_CASE("cmnist golden histogram: n=2000 p=0.9 seed=3") {
    const auto r = gen_cmnist(2000, 500, 0.9, 3);
    REQUIRE(r.train.num_groups == 100);
    std::map<int, int> hist;
    for (int g : r.train.groups) ++hist[g];
    const int golden[10][10] = {
        {181, 2, 2, 3, 1, 1, 5, 4, 1, 1},  {4, 173, 3, 1, 2, 1, 1, 5, 0, 2},
        {1, 6, 191, 1, 0, 2, 4, 2, 4, 1},  {2, 2, 4, 177, 3, 2, 0, 3, 1, 3},
        {2, 2, 0, 1, 165, 3, 1, 2, 2, 5},  {2, 0, 2, 5, 1, 176, 3, 3, 1, 3},
        {3, 3, 1, 4, 2, 3, 210, 5, 0, 2},  {3, 0, 4, 4, 1, 3, 2, 167, 1, 1},
        {3, 2, 0, 3, 2, 2, 2, 4, 185, 2},  {0, 2, 3, 3, 2, 2, 4, 1, 2, 176}};
    for (int l = 0; l < 10; ++l) {
        int class_size = 0;
        for (int a = 0; a < 10; ++a) {
            const int got = hist.count(l * 10 + a) ? hist[l * 10 + a] : 0;
            CHECK(got == golden[l][a]);
            class_size += golden[l][a];
        }
        CHECK(golden[l][l] == static_cast<int>(std::llround(0.9 * class_size)));
    }
}

TEST_CASE("cmnist p=1.0 leaves exactly ten nonempty train groups") {
    const auto r = gen_cmnist(800, 300, 1.0, 4);
    std::map<int, int> hist;
    for (int g : r.train.groups) ++hist[g];
    CHECK(hist.size() == 10);
    for (const auto& [g, c] : hist) CHECK(g % 10 == g / 10);  // all aligned
}

TEST_CASE("generator rejects bad arguments") {
    CHECK_THROWS_AS(gen_even_odd(100, 50, 0.4, 1), std::runtime_error);
    CHECK_THROWS_AS(gen_even_odd(100, 50, 1.2, 1), std::runtime_error);

    // a tiny IDX pool exhausts
    RawDigits pool;
    pool.height = pool.width = 4;
    for (int d = 0; d < 10; ++d) {
        pool.pixels.push_back(std::vector<float>(16, 0.5f));
        pool.labels.push_back(d);
    }
    CHECK_THROWS_WITH_AS(gen_even_odd(100, 50, 0.9, 1, &pool),
                         doctest::Contains("exceeds available source pool"),
                         std::runtime_error);

    RawDigits missing = pool;
    missing.labels[3] = 2;  // digit 3 absent
    CHECK_THROWS_WITH_AS(gen_even_odd(4, 2, 0.9, 1, &missing),
                         doctest::Contains("missing class"), std::runtime_error);
}

TEST_CASE("generation from an IDX source uses the supplied pixel grid") {
    RawDigits pool;
    pool.height = pool.width = 4;
    Rng rng(99);
    for (int i = 0; i < 400; ++i) {
        std::vector<float> px(16);
        for (auto& v : px) v = static_cast<float>(rng.uniform());
        pool.pixels.push_back(px);
        pool.labels.push_back(i % 10);
    }
    const auto r = gen_even_odd(60, 20, 0.9, 1, &pool);
    CHECK(r.train.height == 4);
    CHECK(r.train.width == 4);
    CHECK(r.train.size() == 60);
}

TEST_CASE("group_weights identity and hand cases") {
    LabeledDataset train;
    train.channels = train.height = train.width = 1;
    train.num_classes = 2;
    train.num_groups = 2;
    auto px = std::make_shared<SampleData>(1, 0.5f);
    auto add = [&](LabeledDataset& ds, int label, int group, int count) {
        for (int i = 0; i < count; ++i) {
            ds.features.push_back(px);
            ds.labels.push_back(label);
            ds.groups.push_back(group);
        }
    };
    LabeledDataset eval = train;
    SUBCASE("identical distributions give unit weights") {
        add(train, 0, 0, 30);
        add(train, 1, 1, 70);
        add(eval, 0, 0, 30);
        add(eval, 1, 1, 70);
        const auto w = group_weights(train, eval);
        CHECK(w.weight[0] == doctest::Approx(1.0));
        CHECK(w.weight[1] == doctest::Approx(1.0));
    }
    SUBCASE("90/10 train against 50/50 eval gives 1.8 and 0.2") {
        add(train, 0, 0, 90);
        add(train, 1, 1, 10);
        add(eval, 0, 0, 50);
        add(eval, 1, 1, 50);
        const auto w = group_weights(train, eval);
        CHECK(w.weight[0] == doctest::Approx(1.8));
        CHECK(w.weight[1] == doctest::Approx(0.2));
        double total = 0.0;
        for (int g : eval.groups) total += w.weight[g];
        CHECK(total == doctest::Approx(100.0).epsilon(1e-9));
    }
}

TEST_CASE("group_weights on the golden even-odd run matches hand arithmetic") {
    const auto r = gen_even_odd(1000, 400, 0.9, 7);
    const auto w = group_weights(r.train, r.test);
    // train histogram {432, 48, 52, 468} over N=1000; balanced test 100 each
    const double freq_train[4] = {0.432, 0.048, 0.052, 0.468};
    double raw[4], total_over_eval = 0.0;
    for (int g = 0; g < 4; ++g) {
        raw[g] = freq_train[g] / 0.25;
        total_over_eval += 100.0 * raw[g];
    }
    const double scale = 400.0 / total_over_eval;
    for (int g = 0; g < 4; ++g) {
        CHECK(w.weight[g] == doctest::Approx(raw[g] * scale).epsilon(1e-12));
    }
    double check = 0.0;
    for (int g : r.test.groups) check += w.weight[g];
    CHECK(check == doctest::Approx(400.0).epsilon(1e-9));
}

TEST_CASE("bias_conflicting_groups excludes the aligned diagonal") {
    const auto bc2 = bias_conflicting_groups(2, 4);
    CHECK(bc2 == std::vector<int>{1, 2});
    const auto bc10 = bias_conflicting_groups(10, 100);
    CHECK(bc10.size() == 90);
    for (int g : bc10) CHECK(g % 10 != g / 10);
}

TEST_CASE("TABD round-trip is bit-exact, fuzzed over seeds") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        LabeledDataset ds;
        ds.channels = 1 + static_cast<int>(rng.index(3));
        ds.height = 2 + static_cast<int>(rng.index(5));
        ds.width = 2 + static_cast<int>(rng.index(5));
        ds.num_classes = 2 + static_cast<int>(rng.index(4));
        ds.num_groups = ds.num_classes * 2;
        ds.split_tag = "train";
        ds.meta = "{\"fuzz\":" + std::to_string(seed) + "}";
        const size_t n = 1 + rng.index(40);
        const bool with_groups = rng.index(2) == 0;
        for (size_t i = 0; i < n; ++i) {
            auto s = std::make_shared<SampleData>(ds.sample_values());
            for (auto& v : *s) v = static_cast<float>(rng.uniform(-5.0, 5.0));
            ds.features.push_back(std::move(s));
            ds.labels.push_back(static_cast<int>(rng.index(ds.num_classes)));
            if (with_groups) {
                ds.groups.push_back(static_cast<int>(rng.index(ds.num_groups)));
            }
        }
        const auto p1 = temp_dir() / ("fuzz_a_" + std::to_string(seed) + ".tabd");
        const auto p2 = temp_dir() / ("fuzz_b_" + std::to_string(seed) + ".tabd");
        write_tabd(ds, p1.string());
        const LabeledDataset back = read_tabd(p1.string());
        CHECK(back.labels == ds.labels);
        CHECK(back.groups == ds.groups);
        CHECK(back.split_tag == ds.split_tag);
        CHECK(back.meta == ds.meta);
        write_tabd(back, p2.string());
        CHECK(read_bytes(p1) == read_bytes(p2));
    }
}

TEST_CASE("TABD rejects bad magic and truncation") {
    const auto r = gen_even_odd(20, 10, 0.9, 1);
    const auto path = temp_dir() / "trunc.tabd";
    write_tabd(r.train, path.string());
    auto bytes = read_bytes(path);
    bytes.resize(bytes.size() / 2);
    write_bytes(path, bytes);
    CHECK_THROWS_WITH_AS(read_tabd(path.string()),
                         doctest::Contains("shorter than header claims"),
                         std::runtime_error);
    bytes[0] = 'X';
    write_bytes(path, bytes);
    CHECK_THROWS_WITH_AS(read_tabd(path.string()), doctest::Contains("bad magic"),
                         std::runtime_error);
}
