#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "jacmatch/data.hpp"
#include "jacmatch/rng.hpp"

using namespace jm;
using namespace jm::ad;
using namespace jm::data;

TEST_CASE("blobs with zero noise collapse onto distinct centers (linearly separable)") {
    SyntheticTask task;
    task.kind = TaskKind::gaussian_blobs;
    task.classes = 4;
    task.dim = 8;
    task.noise = 0.0;
    task.train_per_class = 10;
    task.test_per_class = 2;
    auto [train, test] = generate(task, 7);
    // nearest-centroid classification is exact: centers are distinct corners
    std::vector<std::vector<double>> centers(4);
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (centers[static_cast<std::size_t>(train.labels[i])].empty()) {
            centers[static_cast<std::size_t>(train.labels[i])] = std::vector<double>(
                train.inputs[i].data().begin(), train.inputs[i].data().end());
        }
    }
    int correct = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
        int best = -1;
        double best_d = 1e300;
        for (int c = 0; c < 4; ++c) {
            double d = 0.0;
            for (int k = 0; k < 8; ++k) {
                const double diff = train.inputs[i].data()[k] - centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        correct += best == train.labels[i];
    }
    CHECK(correct == static_cast<int>(train.size()));
}

TEST_CASE("same seed gives bit-identical datasets") {
    SyntheticTask task;
    task.kind = TaskKind::two_moons_k;
    task.classes = 3;
    task.noise = 0.15;
    task.train_per_class = 20;
    task.test_per_class = 5;
    auto [a_train, a_test] = generate(task, 42);
    auto [b_train, b_test] = generate(task, 42);
    REQUIRE(a_train.size() == b_train.size());
    for (std::size_t i = 0; i < a_train.size(); ++i) {
        CHECK(a_train.labels[i] == b_train.labels[i]);
        for (std::int64_t j = 0; j < a_train.inputs[i].numel(); ++j) {
            CHECK(a_train.inputs[i].data()[j] == b_train.inputs[i].data()[j]);
        }
    }
}

TEST_CASE("splits are class balanced and disjoint-by-construction") {
    SyntheticTask task;
    task.kind = TaskKind::checkerboard_2d;
    task.classes = 2;
    task.train_per_class = 30;
    task.test_per_class = 10;
    auto [train, test] = generate(task, 3);
    auto tc = train.class_counts();
    auto sc = test.class_counts();
    for (int c = 0; c < 2; ++c) {
        CHECK(tc[static_cast<std::size_t>(c)] == 30);
        CHECK(sc[static_cast<std::size_t>(c)] == 10);
    }
}

TEST_CASE("negative noise is rejected") {
    SyntheticTask task;
    task.noise = -0.1;
    CHECK_THROWS_WITH_AS(generate(task, 0), doctest::Contains("noise"), jm::ConfigError);
}

TEST_CASE("blobs honor image shapes for conv consumption") {
    SyntheticTask task;
    task.kind = TaskKind::gaussian_blobs;
    task.classes = 2;
    task.dim = 64;
    task.image_shape = {1, 8, 8};
    task.train_per_class = 3;
    task.test_per_class = 1;
    auto [train, test] = generate(task, 5);
    CHECK(train.inputs[0].shape() == Shape{1, 8, 8});
}

TEST_CASE("subset_per_class: full count is an identity up to order") {
    SyntheticTask task;
    task.classes = 3;
    task.train_per_class = 8;
    task.test_per_class = 2;
    auto [train, test] = generate(task, 1);
    Dataset sub = subset_per_class(train, 8, 99);
    CHECK(sub.size() == train.size());
    // same multiset of (label, first coordinate) pairs
    std::multiset<std::pair<int, double>> a, b;
    for (std::size_t i = 0; i < train.size(); ++i) {
        a.insert({train.labels[i], train.inputs[i].data()[0]});
        b.insert({sub.labels[i], sub.inputs[i].data()[0]});
    }
    CHECK(a == b);
}

TEST_CASE("subset_per_class: n=1 over 100 classes gives 100 distinct labels") {
    SyntheticTask task;
    task.kind = TaskKind::gaussian_blobs;
    task.classes = 100;
    task.dim = 12;
    task.train_per_class = 3;
    task.test_per_class = 1;
    auto [train, test] = generate(task, 11);
    Dataset sub = subset_per_class(train, 1, 4);
    CHECK(sub.size() == 100);
    std::set<int> labels(sub.labels.begin(), sub.labels.end());
    CHECK(labels.size() == 100);
}

TEST_CASE("subset_per_class: different seeds draw different subsets") {
    SyntheticTask task;
    task.classes = 2;
    task.train_per_class = 50;
    task.test_per_class = 2;
    auto [train, test] = generate(task, 13);
    Dataset s1 = subset_per_class(train, 5, 1);
    Dataset s2 = subset_per_class(train, 5, 2);
    int differing = 0;
    for (std::size_t i = 0; i < s1.size(); ++i) {
        differing += s1.inputs[i].data()[0] != s2.inputs[i].data()[0];
    }
    CHECK(differing > 0);
}

TEST_CASE("subset_per_class: insufficient class is rejected naming it") {
    SyntheticTask task;
    task.classes = 2;
    task.train_per_class = 4;
    task.test_per_class = 2;
    auto [train, test] = generate(task, 17);
    CHECK_THROWS_WITH_AS(subset_per_class(train, 5, 0), doctest::Contains("class 0"),
                         std::runtime_error);
}

TEST_CASE("load_image_binary: handcrafted 2-record file round-trips exact pixel values") {
    const std::string path = "/tmp/jm_data_test.bin";
    {
        std::ofstream os(path, std::ios::binary);
        // record 1: label 1, pixels 0..11 ; record 2: label 0, pixels 255..
        unsigned char rec1[13] = {1};
        for (int p = 0; p < 12; ++p) rec1[1 + p] = static_cast<unsigned char>(p);
        unsigned char rec2[13] = {0};
        for (int p = 0; p < 12; ++p) rec2[1 + p] = static_cast<unsigned char>(255 - p);
        os.write(reinterpret_cast<char*>(rec1), 13);
        os.write(reinterpret_cast<char*>(rec2), 13);
    }
    BinaryLayout layout;
    layout.classes = 2;
    layout.channels = 3;
    layout.height = 2;
    layout.width = 2;
    layout.mean = {0.0, 0.0, 0.0};
    layout.stdev = {1.0, 1.0, 1.0};  // identity normalization: raw [0,1] pixels
    Dataset ds = load_image_binary(path, layout);
    REQUIRE(ds.size() == 2);
    CHECK(ds.labels[0] == 1);
    CHECK(ds.labels[1] == 0);
    CHECK(ds.inputs[0].data()[0] == doctest::Approx(0.0));
    CHECK(ds.inputs[0].data()[5] == doctest::Approx(5.0 / 255.0));
    CHECK(ds.inputs[1].data()[0] == doctest::Approx(1.0));
    CHECK(ds.normalized);
    std::remove(path.c_str());
}

TEST_CASE("load_image_binary: empty file is a valid size-0 dataset") {
    const std::string path = "/tmp/jm_data_empty.bin";
    { std::ofstream os(path, std::ios::binary); }
    BinaryLayout layout{10, 1, 2, 2, {}, {}};
    Dataset ds = load_image_binary(path, layout);
    CHECK(ds.size() == 0);
    std::remove(path.c_str());
}

TEST_CASE("load_image_binary: out-of-range label byte is rejected at its offset") {
    const std::string path = "/tmp/jm_data_bad.bin";
    {
        std::ofstream os(path, std::ios::binary);
        unsigned char rec[5] = {255, 1, 2, 3, 4};
        os.write(reinterpret_cast<char*>(rec), 5);
    }
    BinaryLayout layout{100, 1, 2, 2, {}, {}};
    CHECK_THROWS_WITH_AS(load_image_binary(path, layout), doctest::Contains("offset 0"),
                         std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("load_image_binary: truncated record is rejected with the byte offset") {
    const std::string path = "/tmp/jm_data_trunc.bin";
    {
        std::ofstream os(path, std::ios::binary);
        unsigned char bytes[7] = {0, 1, 2, 3, 4, 0, 9};  // 1 full record + 2 stray bytes
        os.write(reinterpret_cast<char*>(bytes), 7);
    }
    BinaryLayout layout{10, 1, 2, 2, {}, {}};
    CHECK_THROWS_WITH_AS(load_image_binary(path, layout), doctest::Contains("truncated"),
                         std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("add_input_noise: sigma 0 is the identity") {
    SyntheticTask task;
    task.classes = 2;
    task.train_per_class = 5;
    task.test_per_class = 1;
    auto [train, test] = generate(task, 19);
    Dataset noisy = add_input_noise(train, 0.0, 5);
    for (std::size_t i = 0; i < train.size(); ++i) {
        for (std::int64_t j = 0; j < train.inputs[i].numel(); ++j) {
            CHECK(noisy.inputs[i].data()[j] == train.inputs[i].data()[j]);
        }
    }
}

TEST_CASE("add_input_noise: per-pixel sample variance within 2% of sigma^2") {
    Dataset ds;
    ds.classes = 1;
    ds.name = "flat";
    const int n = 100000;
    // one big flat example set: 1 pixel each, all zeros
    for (int i = 0; i < n; ++i) {
        ds.inputs.push_back(Tensor::zeros({1}));
        ds.labels.push_back(0);
    }
    const double sigma = 0.7;
    Dataset noisy = add_input_noise(ds, sigma, 23);
    double mean = 0.0;
    for (const auto& t : noisy.inputs) mean += t.data()[0];
    mean /= n;
    double var = 0.0;
    for (const auto& t : noisy.inputs) var += (t.data()[0] - mean) * (t.data()[0] - mean);
    var /= n - 1;
    CHECK(std::fabs(var - sigma * sigma) / (sigma * sigma) <= 0.02);
}

TEST_CASE("normalize: applies exactly once and the flag guards a second pass") {
    SyntheticTask task;
    task.classes = 2;
    task.train_per_class = 20;
    task.test_per_class = 2;
    auto [train, test] = generate(task, 29);
    normalize(train);
    CHECK(train.normalized);
    CHECK_THROWS_WITH_AS(normalize(train), doctest::Contains("already normalized"),
                         std::runtime_error);
}

TEST_CASE("manifest records name, counts, class list, stats, and seed") {
    SyntheticTask task;
    task.classes = 3;
    task.train_per_class = 4;
    task.test_per_class = 2;
    auto [train, test] = generate(task, 31);
    auto j = manifest(train);
    CHECK(j["count"] == 12);
    CHECK(j["classes"] == 3);
    CHECK(j["seed"] == 31);
    CHECK(j["class_counts"].size() == 3);
}
