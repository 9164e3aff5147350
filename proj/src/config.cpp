#include "ctdg/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ctdg/errors.hpp"

namespace ctdg {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

// Accumulates field errors so a bad config reports everything at once.
struct FieldReader {
    const std::map<std::string, std::string>& kv;
    std::vector<std::string> errors;
    std::vector<std::string> unknown;

    explicit FieldReader(const std::map<std::string, std::string>& m) : kv(m) {
        for (const auto& [k, v] : kv) unknown.push_back(k);
    }

    void mark_known(const std::string& key) {
        unknown.erase(std::remove(unknown.begin(), unknown.end(), key), unknown.end());
    }

    template <typename Fn>
    void field(const std::string& key, Fn&& parse) {
        mark_known(key);
        auto it = kv.find(key);
        if (it == kv.end()) return;
        try {
            parse(it->second);
        } catch (const std::exception& e) {
            errors.push_back(key + ": " + e.what());
        }
    }

    void finish() {
        for (const auto& k : unknown) errors.push_back(k + ": unknown configuration key");
        if (!errors.empty()) {
            std::string msg = "invalid configuration (" + std::to_string(errors.size()) +
                              " problem(s)):";
            for (const auto& e : errors) msg += "\n  - " + e;
            throw ValidationError(msg);
        }
    }
};

double to_double(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
    return v;
}

long long to_int(const std::string& s) {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument("not an integer: '" + s + "'");
    return v;
}

std::vector<int> to_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(static_cast<int>(to_int(item)));
    }
    if (out.empty()) throw std::invalid_argument("empty list");
    return out;
}

}  // namespace

std::map<std::string, std::string> read_ini(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ValidationError(path + ":" + std::to_string(lineno) + ": bad section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        kv[section.empty() ? key : section + "." + key] = value;
    }
    return kv;
}

RunConfig parse_run_config(const std::string& path,
                           const std::map<std::string, std::string>& overrides) {
    std::map<std::string, std::string> kv = read_ini(path);
    for (const auto& [k, v] : overrides) kv[k] = v;

    RunConfig cfg;
    FieldReader reader(kv);

    reader.field("run.task", [&](const std::string& v) { cfg.task = parse_task(v); });
    reader.field("run.out", [&](const std::string& v) { cfg.out_dir = v; });
    reader.field("run.seed", [&](const std::string& v) {
        cfg.seed = static_cast<std::uint64_t>(to_int(v));
        cfg.train.seed = cfg.seed;
        cfg.spectral.seed = cfg.seed;
    });

    reader.field("data.events", [&](const std::string& v) { cfg.events_path = v; });
    reader.field("data.features", [&](const std::string& v) { cfg.features_path = v; });
    reader.field("data.initial_edges", [&](const std::string& v) { cfg.initial_edges_path = v; });
    reader.field("data.readings", [&](const std::string& v) { cfg.readings_path = v; });
    reader.field("data.labels", [&](const std::string& v) { cfg.labels_path = v; });
    reader.field("data.n_nodes", [&](const std::string& v) { cfg.n_nodes = to_int(v); });
    reader.field("data.n_users", [&](const std::string& v) { cfg.n_users = to_int(v); });
    reader.field("data.t0", [&](const std::string& v) { cfg.t0 = to_double(v); });

    reader.field("cluster.k", [&](const std::string& v) {
        cfg.cluster_k = static_cast<int>(to_int(v));
        if (cfg.cluster_k < 1) throw std::invalid_argument("must be >= 1");
    });

    reader.field("encoder.layers", [&](const std::string& v) {
        cfg.encoder.layers = static_cast<int>(to_int(v));
    });
    reader.field("encoder.heads", [&](const std::string& v) {
        cfg.encoder.heads = static_cast<int>(to_int(v));
    });
    reader.field("encoder.dim", [&](const std::string& v) {
        cfg.encoder.dim = static_cast<int>(to_int(v));
    });
    reader.field("encoder.variant", [&](const std::string& v) {
        cfg.encoder.variant = parse_variant(v);
    });
    reader.field("encoder.time_scale", [&](const std::string& v) {
        if (v == "auto") {
            cfg.time_scale_auto = true;
        } else {
            cfg.time_scale_auto = false;
            cfg.encoder.time_scale = to_double(v);
            if (cfg.encoder.time_scale <= 0.0) throw std::invalid_argument("must be positive");
        }
    });
    reader.field("encoder.neighbor_cap", [&](const std::string& v) {
        cfg.neighbor_cap = static_cast<int>(to_int(v));
        if (cfg.neighbor_cap < 0) throw std::invalid_argument("must be >= 0");
    });

    reader.field("train.lr", [&](const std::string& v) { cfg.train.lr = to_double(v); });
    reader.field("train.epochs", [&](const std::string& v) {
        cfg.train.epochs = static_cast<int>(to_int(v));
    });
    reader.field("train.batch_size", [&](const std::string& v) {
        cfg.train.batch_size = static_cast<int>(to_int(v));
    });
    reader.field("train.mask_ratio", [&](const std::string& v) {
        cfg.train.mask_ratio = to_double(v);
    });
    reader.field("train.mask_mode", [&](const std::string& v) {
        if (v == "cam") {
            cfg.train.mask_mode = MaskMode::CaM;
        } else if (v == "special-token") {
            cfg.train.mask_mode = MaskMode::SpecialToken;
        } else {
            throw std::invalid_argument("expected 'cam' or 'special-token'");
        }
    });
    reader.field("train.gamma", [&](const std::string& v) { cfg.train.gamma = to_double(v); });
    reader.field("train.integrator", [&](const std::string& v) {
        if (v == "trapezoid") {
            cfg.train.integrator = Integrator::Trapezoid;
        } else if (v == "mc") {
            cfg.train.integrator = Integrator::MonteCarlo;
        } else {
            throw std::invalid_argument("expected 'trapezoid' or 'mc'");
        }
    });
    reader.field("train.mc_samples", [&](const std::string& v) {
        cfg.train.mc_samples = static_cast<int>(to_int(v));
    });
    reader.field("train.patience", [&](const std::string& v) {
        cfg.train.patience = static_cast<int>(to_int(v));
    });
    reader.field("train.decay_every", [&](const std::string& v) {
        cfg.train.decay_every = static_cast<int>(to_int(v));
    });
    reader.field("train.decay_rate", [&](const std::string& v) {
        cfg.train.decay_rate = to_double(v);
    });
    reader.field("train.tpple_event_cap", [&](const std::string& v) {
        cfg.train.tpple_event_cap = static_cast<int>(to_int(v));
    });

    reader.field("task.classes", [&](const std::string& v) {
        cfg.classes = static_cast<int>(to_int(v));
        if (cfg.classes < 2) throw std::invalid_argument("must be >= 2");
    });
    reader.field("task.horizon_steps", [&](const std::string& v) {
        cfg.horizon_steps = static_cast<int>(to_int(v));
        if (cfg.horizon_steps < 1) throw std::invalid_argument("must be >= 1");
    });
    reader.field("task.eval_horizons",
                 [&](const std::string& v) { cfg.eval_horizons = to_int_list(v); });
    reader.field("task.train_frac", [&](const std::string& v) {
        cfg.train_frac = to_double(v);
        if (cfg.train_frac <= 0.0 || cfg.train_frac >= 1.0) {
            throw std::invalid_argument("must lie in (0,1)");
        }
    });
    reader.field("task.val_frac", [&](const std::string& v) {
        cfg.val_frac = to_double(v);
        if (cfg.val_frac <= 0.0 || cfg.val_frac >= 1.0) {
            throw std::invalid_argument("must lie in (0,1)");
        }
    });

    reader.field("spectral.s", [&](const std::string& v) {
        cfg.spectral.s = static_cast<int>(to_int(v));
    });
    reader.field("spectral.r", [&](const std::string& v) {
        cfg.spectral.r = static_cast<int>(to_int(v));
    });
    reader.field("spectral.p", [&](const std::string& v) {
        cfg.spectral.p = static_cast<int>(to_int(v));
    });
    reader.field("spectral.q", [&](const std::string& v) {
        cfg.spectral.q = static_cast<int>(to_int(v));
    });
    reader.field("spectral.spectrum_end", [&](const std::string& v) {
        if (v == "low") {
            cfg.spectral.spectrum_end = SpectrumEnd::Low;
        } else if (v == "high") {
            cfg.spectral.spectrum_end = SpectrumEnd::High;
        } else {
            throw std::invalid_argument("expected 'low' or 'high'");
        }
    });
    reader.field("spectral.power_target", [&](const std::string& v) {
        if (v == "intersection") {
            cfg.spectral.power_target = PowerTarget::IntersectionBlock;
        } else if (v == "normalized") {
            cfg.spectral.power_target = PowerTarget::NormalizedBlock;
        } else {
            throw std::invalid_argument("expected 'intersection' or 'normalized'");
        }
    });

    // Cross-field checks gather into the same report.
    auto require_file = [&](const std::string& field, const std::string& p) {
        if (p.empty()) {
            reader.errors.push_back(field + ": required for task '" + task_name(cfg.task) + "'");
            return;
        }
        std::ifstream f(p);
        if (!f) reader.errors.push_back(field + ": file not found: " + p);
    };
    if (cfg.task == TaskKind::TrafficForecast) {
        require_file("data.readings", cfg.readings_path);
        require_file("data.initial_edges", cfg.initial_edges_path);
    } else {
        require_file("data.events", cfg.events_path);
        if (!cfg.features_path.empty()) require_file("data.features", cfg.features_path);
        if (cfg.task == TaskKind::LinkPrediction && cfg.n_users <= 0) {
            reader.errors.push_back("data.n_users: required for the link task");
        }
        if (cfg.task == TaskKind::NodeClassification) {
            require_file("data.labels", cfg.labels_path);
        }
    }
    try {
        cfg.train.validate();
    } catch (const std::exception& e) {
        reader.errors.push_back(e.what());
    }
    reader.finish();
    return cfg;
}

double median_interevent_gap(const EventLog& events) {
    std::vector<double> gaps;
    for (std::size_t i = 1; i < events.size(); ++i) {
        const double g = events[i].t - events[i - 1].t;
        if (g > 0.0) gaps.push_back(g);
    }
    if (gaps.empty()) return 1.0;
    std::sort(gaps.begin(), gaps.end());
    return gaps[gaps.size() / 2];
}

std::string RunConfig::resolved_text() const {
    char buf[64];
    std::ostringstream os;
    os << "[run]\n";
    os << "task=" << task_name(task) << "\n";
    os << "out=" << out_dir << "\n";
    os << "seed=" << seed << "\n";
    os << "[data]\n";
    if (!events_path.empty()) os << "events=" << events_path << "\n";
    if (!features_path.empty()) os << "features=" << features_path << "\n";
    if (!initial_edges_path.empty()) os << "initial_edges=" << initial_edges_path << "\n";
    if (!readings_path.empty()) os << "readings=" << readings_path << "\n";
    if (!labels_path.empty()) os << "labels=" << labels_path << "\n";
    if (n_nodes > 0) os << "n_nodes=" << n_nodes << "\n";
    if (n_users > 0) os << "n_users=" << n_users << "\n";
    os << "[cluster]\n";
    os << "k=" << cluster_k << "\n";
    os << "[encoder]\n";
    os << "layers=" << encoder.layers << "\n";
    os << "heads=" << encoder.heads << "\n";
    os << "dim=" << encoder.dim << "\n";
    os << "variant=" << variant_name(encoder.variant) << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", encoder.time_scale);
    os << "time_scale=" << (time_scale_auto ? std::string("auto") : std::string(buf)) << "\n";
    os << "neighbor_cap=" << neighbor_cap << "\n";
    os << "[train]\n";
    std::snprintf(buf, sizeof(buf), "%.17g", train.lr);
    os << "lr=" << buf << "\n";
    os << "epochs=" << train.epochs << "\n";
    os << "batch_size=" << train.batch_size << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", train.mask_ratio);
    os << "mask_ratio=" << buf << "\n";
    os << "mask_mode=" << (train.mask_mode == MaskMode::CaM ? "cam" : "special-token") << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", train.gamma);
    os << "gamma=" << buf << "\n";
    os << "integrator="
       << (train.integrator == Integrator::Trapezoid ? "trapezoid" : "mc") << "\n";
    os << "mc_samples=" << train.mc_samples << "\n";
    os << "patience=" << train.patience << "\n";
    os << "decay_every=" << train.decay_every << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", train.decay_rate);
    os << "decay_rate=" << buf << "\n";
    os << "tpple_event_cap=" << train.tpple_event_cap << "\n";
    os << "[task]\n";
    os << "classes=" << classes << "\n";
    os << "horizon_steps=" << horizon_steps << "\n";
    os << "eval_horizons=";
    for (std::size_t i = 0; i < eval_horizons.size(); ++i) {
        os << (i ? "," : "") << eval_horizons[i];
    }
    os << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", train_frac);
    os << "train_frac=" << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", val_frac);
    os << "val_frac=" << buf << "\n";
    os << "[spectral]\n";
    os << "s=" << spectral.s << "\n";
    os << "r=" << spectral.r << "\n";
    os << "p=" << spectral.p << "\n";
    os << "q=" << spectral.q << "\n";
    os << "spectrum_end=" << (spectral.spectrum_end == SpectrumEnd::Low ? "low" : "high") << "\n";
    return os.str();
}

}  // namespace ctdg
