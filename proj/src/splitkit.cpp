#include "avibench/splitkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "avibench/common.hpp"
#include "avibench/rng.hpp"

namespace avb {

const char* split_name(SplitSet s) {
    switch (s) {
        case SplitSet::train: return "train";
        case SplitSet::validation: return "validation";
        default: return "test";
    }
}

SplitSet split_from_name(const std::string& name) {
    if (name == "train") return SplitSet::train;
    if (name == "validation") return SplitSet::validation;
    if (name == "test") return SplitSet::test;
    throw ParseError("unknown split set '" + name + "'");
}

SplitAssignment stratified_session_split(const Manifest& manifest,
                                         std::array<double, 3> ratios) {
    manifest.validate();
    double sum = 0.0;
    for (double r : ratios) {
        if (r <= 0.0) throw ConfigError("split: ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: ratios must sum to 1");

    SplitAssignment out;
    out.ratios = ratios;
    for (const std::string& cls : manifest.classes) {
        std::vector<const SessionRecord*> sessions;
        long total = 0;
        for (const SessionRecord& s : manifest.sessions)
            if (s.class_label == cls) {
                sessions.push_back(&s);
                total += s.sample_count;
            }
        if (sessions.size() == 1)
            out.warnings.push_back("class '" + cls +
                                   "' has a single session; it cannot appear in all three sets");
        std::sort(sessions.begin(), sessions.end(),
                  [](const SessionRecord* a, const SessionRecord* b) {
                      if (a->sample_count != b->sample_count)
                          return a->sample_count > b->sample_count;
                      return a->session_id < b->session_id;
                  });

        const double train_target = ratios[0] * static_cast<double>(total);
        const double val_target = ratios[1] * static_cast<double>(total);
        long assigned_train = 0, assigned_val = 0;
        for (const SessionRecord* s : sessions) {
            if (static_cast<double>(assigned_train) < train_target) {
                out.assignment[s->session_id] = SplitSet::train;
                assigned_train += s->sample_count;
            } else if (static_cast<double>(assigned_val) < val_target) {
                out.assignment[s->session_id] = SplitSet::validation;
                assigned_val += s->sample_count;
            } else {
                out.assignment[s->session_id] = SplitSet::test;
            }
        }
    }
    return out;
}

SplitReport split_report(const SplitAssignment& assignment, const Manifest& manifest) {
    SplitReport rep;
    std::map<std::string, std::array<long, 3>> per_class;
    for (const std::string& cls : manifest.classes) per_class[cls] = {0, 0, 0};
    for (const SessionRecord& s : manifest.sessions) {
        const auto it = assignment.assignment.find(s.session_id);
        if (it == assignment.assignment.end())
            throw ValidationError("split_report: session '" + s.session_id + "' unassigned");
        const auto set = static_cast<std::size_t>(it->second);
        per_class[s.class_label][set] += s.sample_count;
        rep.set_totals[set] += s.sample_count;
    }
    for (const std::string& cls : manifest.classes) {
        const auto& counts = per_class[cls];
        const long total = counts[0] + counts[1] + counts[2];
        for (int set = 0; set < 3; ++set) {
            SplitReportRow row;
            row.class_label = cls;
            row.set = static_cast<SplitSet>(set);
            row.count = counts[static_cast<std::size_t>(set)];
            row.percent = total > 0 ? 100.0 * static_cast<double>(row.count) / total : 0.0;
            rep.rows.push_back(row);
        }
        rep.train_fraction_deviation[cls] =
            std::abs(static_cast<double>(counts[0]) / static_cast<double>(total) -
                     assignment.ratios[0]);
    }
    return rep;
}

std::string split_report_csv(const SplitReport& report) {
    std::ostringstream os;
    os << "class,set,count,percent\n";
    for (const SplitReportRow& r : report.rows) {
        char pct[32];
        std::snprintf(pct, sizeof(pct), "%.2f", r.percent);
        os << r.class_label << ',' << split_name(r.set) << ',' << r.count << ',' << pct << '\n';
    }
    os << "__total__,train," << report.set_totals[0] << ",\n";
    os << "__total__,validation," << report.set_totals[1] << ",\n";
    os << "__total__,test," << report.set_totals[2] << ",\n";
    return os.str();
}

std::map<std::string, double> class_weights(const std::map<std::string, long>& train_counts) {
    if (train_counts.empty()) throw ValidationError("class_weights: no classes");
    long n_train = 0;
    for (const auto& [cls, n] : train_counts) {
        if (n < 1)
            throw ValidationError("class_weights: class '" + cls +
                                  "' is absent from the training set; regenerate the split");
        n_train += n;
    }
    const double k = static_cast<double>(train_counts.size());
    std::map<std::string, double> out;
    for (const auto& [cls, n] : train_counts)
        out[cls] = static_cast<double>(n_train) / (k * static_cast<double>(n));
    return out;
}

ScalerParams fit_minmax(const std::vector<const MelSpectrogram*>& train_specs) {
    if (train_specs.empty()) throw ValidationError("fit_minmax: no training spectrograms");
    ScalerParams p;
    bool first = true;
    for (const MelSpectrogram* s : train_specs)
        for (float v : s->values) {
            if (first) {
                p.min = p.max = v;
                first = false;
            } else {
                p.min = std::min(p.min, static_cast<double>(v));
                p.max = std::max(p.max, static_cast<double>(v));
            }
        }
    if (first) throw ValidationError("fit_minmax: empty spectrograms");
    return p;
}

void apply_minmax(const ScalerParams& p, MelSpectrogram& s) {
    if (p.max <= p.min) {
        std::fill(s.values.begin(), s.values.end(), 0.0f);
        return;
    }
    const double span = p.max - p.min;
    for (float& v : s.values) {
        const double x = (static_cast<double>(v) - p.min) / span;
        v = static_cast<float>(std::clamp(x, 0.0, 1.0));
    }
}

std::vector<std::size_t> shuffle_training(std::vector<std::size_t> order, std::uint64_t seed) {
    if (order.empty()) throw ValidationError("shuffle_training: empty order");
    Rng rng(seed);
    rng.shuffle(order);
    return order;
}

std::uint64_t epoch_seed(std::uint64_t base_seed, int epoch) {
    return mix_seed(base_seed, static_cast<std::uint64_t>(epoch));
}

void save_split(const SplitAssignment& a, const std::map<std::string, double>& weights,
                const ScalerParams& scaler, std::uint64_t seed, const std::string& path) {
    nlohmann::json j;
    j["ratios"] = a.ratios;
    nlohmann::json asg = nlohmann::json::object();
    for (const auto& [id, set] : a.assignment) asg[id] = split_name(set);
    j["assignment"] = asg;
    j["class_weights"] = weights;
    j["scaler"] = {{"min", scaler.min}, {"max", scaler.max}};
    j["seed"] = seed;
    j["warnings"] = a.warnings;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write split file: " + path);
    out << j.dump(2) << '\n';
}

SplitArtifact load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open split file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    SplitArtifact art;
    art.assignment.ratios = j.at("ratios").get<std::array<double, 3>>();
    for (const auto& [id, set] : j.at("assignment").items())
        art.assignment.assignment[id] = split_from_name(set.get<std::string>());
    art.weights = j.at("class_weights").get<std::map<std::string, double>>();
    art.scaler.min = j.at("scaler").at("min").get<double>();
    art.scaler.max = j.at("scaler").at("max").get<double>();
    art.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("warnings"))
        art.assignment.warnings = j.at("warnings").get<std::vector<std::string>>();
    return art;
}

}  // namespace avb
