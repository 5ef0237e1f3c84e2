#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <vector>

#include "perlearn/dataset.hpp"
#include "perlearn/metrics.hpp"
#include "perlearn/rng.hpp"

using namespace perlearn;

namespace {

// Builds a grouped dataset and a prediction vector realizing the requested
// per-group accuracies exactly (group sizes chosen divisibly).
struct GroupCase {
    Dataset data;
    std::vector<int> preds;
};

GroupCase make_group_case(const std::vector<double>& accs, size_t per_group) {
    GroupCase gc;
    size_t g = accs.size();
    size_t n = g * per_group;
    gc.data.x = Matrix(n, 1, 0.0);
    gc.data.labels.assign(n, 1);
    gc.data.groups.resize(n);
    for (size_t k = 0; k < g; ++k) gc.data.group_names.push_back("g" + std::to_string(k));
    gc.data.num_classes = 2;
    gc.data.label_space = LabelSpace::pm_one;
    recompute_feature_range(gc.data);
    gc.preds.assign(n, 1);
    for (size_t k = 0; k < g; ++k) {
        size_t hits = size_t(accs[k] * double(per_group) + 0.5);
        for (size_t i = 0; i < per_group; ++i) {
            size_t row = k * per_group + i;
            gc.data.groups[row] = int(k);
            gc.preds[row] = i < hits ? 1 : -1;
        }
    }
    return gc;
}

}  // namespace

TEST_CASE("accuracy is one when every prediction is right") {
    std::vector<int> preds{1, -1, 1};
    std::vector<int> labels{1, -1, 1};
    REQUIRE(accuracy(preds, labels) == 1.0);
}

TEST_CASE("constant classifier scores one half on balanced data") {
    std::vector<int> preds(10, 1);
    std::vector<int> labels{1, 1, 1, 1, 1, -1, -1, -1, -1, -1};
    REQUIRE(accuracy(preds, labels) == 0.5);
}

TEST_CASE("accuracy equals the per-sample loop oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        size_t n = 1 + rng.uniform_int(200);
        std::vector<int> preds(n), labels(n);
        for (size_t i = 0; i < n; ++i) {
            preds[i] = rng.sign();
            labels[i] = rng.sign();
        }
        size_t hits = 0;
        for (size_t i = 0; i < n; ++i)
            if (preds[i] == labels[i]) ++hits;
        REQUIRE(accuracy(preds, labels) == double(hits) / double(n));
    }
}

TEST_CASE("worst group accuracy is the minimum") {
    auto gc = make_group_case({0.9, 0.5, 0.7, 0.8}, 10);
    GroupReport rep = group_report(gc.preds, gc.data);
    REQUIRE(rep.worst_group_acc == 0.5);
    REQUIRE(rep.worst_group == 1);
    REQUIRE(rep.group_acc.size() == 4);
    REQUIRE(rep.group_acc[0] == 0.9);
    REQUIRE(rep.group_acc[3] == 0.8);
    REQUIRE(rep.overall == Catch::Approx((0.9 + 0.5 + 0.7 + 0.8) / 4.0).margin(1e-15));
}

TEST_CASE("single group collapses wga onto the overall accuracy") {
    auto gc = make_group_case({0.7}, 10);
    GroupReport rep = group_report(gc.preds, gc.data);
    REQUIRE(rep.worst_group_acc == rep.overall);
}

TEST_CASE("misclassifying an entire minority group zeroes wga") {
    auto gc = make_group_case({1.0, 0.0}, 5);
    GroupReport rep = group_report(gc.preds, gc.data);
    REQUIRE(rep.worst_group_acc == 0.0);
    REQUIRE(rep.worst_group == 1);
    REQUIRE(rep.overall == 0.5);
}

TEST_CASE("wga never exceeds the overall accuracy") {
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        size_t g = 1 + rng.uniform_int(6);
        size_t n = g * (2 + rng.uniform_int(30));
        Dataset d;
        d.x = Matrix(n, 1, 0.0);
        d.labels.assign(n, 1);
        d.groups.resize(n);
        for (size_t k = 0; k < g; ++k) d.group_names.push_back("g" + std::to_string(k));
        d.num_classes = 2;
        d.label_space = LabelSpace::pm_one;
        recompute_feature_range(d);
        std::vector<int> preds(n);
        for (size_t i = 0; i < n; ++i) {
            d.groups[i] = int(i % g);  // every group nonempty
            preds[i] = rng.sign();
        }
        GroupReport rep = group_report(preds, d);
        REQUIRE(rep.worst_group_acc <= rep.overall + 1e-15);
    }
}

TEST_CASE("row order does not change the report") {
    auto gc = make_group_case({0.9, 0.4, 0.6}, 10);
    GroupReport before = group_report(gc.preds, gc.data);
    // reverse rows
    size_t n = gc.data.size();
    Dataset rev = gc.data;
    std::vector<int> rpreds(n);
    for (size_t i = 0; i < n; ++i) {
        size_t j = n - 1 - i;
        rev.labels[i] = gc.data.labels[j];
        rev.groups[i] = gc.data.groups[j];
        rpreds[i] = gc.preds[j];
    }
    GroupReport after = group_report(rpreds, rev);
    REQUIRE(before.overall == after.overall);
    REQUIRE(before.worst_group_acc == after.worst_group_acc);
    REQUIRE(before.group_acc == after.group_acc);
}

TEST_CASE("an empty group is an error naming the group") {
    auto gc = make_group_case({0.9, 0.5}, 10);
    gc.data.group_names.push_back("never_filled");
    try {
        group_report(gc.preds, gc.data);
        FAIL("expected a throw");
    } catch (const Error& e) {
        REQUIRE(std::string(e.what()).find("never_filled") != std::string::npos);
    }
}

TEST_CASE("empty inputs are rejected") {
    REQUIRE_THROWS_AS(accuracy({}, {}), Error);
    std::vector<int> preds{1, -1};
    std::vector<int> labels{1};
    REQUIRE_THROWS_AS(accuracy(preds, labels), Error);
}
