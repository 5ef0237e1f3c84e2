#pragma once

#include <string>
#include <vector>

#include "perlearn/common.hpp"
#include "perlearn/dataset.hpp"

namespace perlearn {

inline double accuracy(const std::vector<int>& predictions,
                       const std::vector<int>& labels) {
    require(predictions.size() == labels.size(), ErrorCategory::dimension,
            "accuracy: size mismatch");
    require(!labels.empty(), ErrorCategory::config, "accuracy: empty input");
    size_t hits = 0;
    for (size_t i = 0; i < labels.size(); ++i)
        if (predictions[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

struct GroupReport {
    double overall = 0.0;
    std::vector<double> group_acc;
    std::vector<size_t> group_count;
    std::vector<std::string> group_names;
    double worst_group_acc = 0.0;
    size_t worst_group = 0;
};

// Per-(attribute,label)-group accuracy and the worst-group accuracy. Every
// declared group must be populated; an empty one is an error naming it.
inline GroupReport group_report(const std::vector<int>& predictions,
                                const Dataset& data) {
    require(data.has_groups(), ErrorCategory::config,
            "group_report: dataset has no group annotations");
    require(predictions.size() == data.size(), ErrorCategory::dimension,
            "group_report: predictions size mismatch");
    size_t ngroups = data.group_names.size();
    GroupReport rep;
    rep.group_names = data.group_names;
    rep.group_acc.assign(ngroups, 0.0);
    rep.group_count.assign(ngroups, 0);
    std::vector<size_t> hits(ngroups, 0);
    size_t total_hits = 0;
    for (size_t i = 0; i < data.size(); ++i) {
        int g = data.groups[i];
        ++rep.group_count[static_cast<size_t>(g)];
        bool hit = predictions[i] == data.labels[i];
        if (hit) {
            ++hits[static_cast<size_t>(g)];
            ++total_hits;
        }
    }
    rep.overall = static_cast<double>(total_hits) / static_cast<double>(data.size());
    rep.worst_group_acc = 2.0;  // above any accuracy; replaced by first group
    for (size_t g = 0; g < ngroups; ++g) {
        require(rep.group_count[g] > 0, ErrorCategory::schema,
                "group_report: empty group '" + data.group_names[g] + "'");
        rep.group_acc[g] =
            static_cast<double>(hits[g]) / static_cast<double>(rep.group_count[g]);
        if (rep.group_acc[g] < rep.worst_group_acc) {
            rep.worst_group_acc = rep.group_acc[g];
            rep.worst_group = g;
        }
    }
    return rep;
}

}  // namespace perlearn
