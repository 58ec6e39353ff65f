#include "uaed/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <boost/math/distributions/beta.hpp>

#include "uaed/data.hpp"
#include "uaed/error.hpp"
#include "uaed/experiment.hpp"
#include "uaed/trainer.hpp"

namespace uaed::plot {

namespace {

namespace fs = std::filesystem;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

const char* colour(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(4) << v;
    return s.str();
}

// Minimal SVG canvas with a single plotting area.
class Canvas {
public:
    Canvas(std::string title, std::string xlabel, std::string ylabel)
        : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

    void set_x(double lo, double hi) { x0_ = lo, x1_ = hi; }
    void set_y(double lo, double hi, bool log = false) {
        y0_ = lo, y1_ = hi, log_y_ = log;
    }

    double px(double x) const { return kLeft + (x - x0_) / (x1_ - x0_) * width(); }
    double py(double y) const {
        const double t = log_y_ ? (std::log10(y) - std::log10(y0_)) / (std::log10(y1_) - std::log10(y0_))
                                : (y - y0_) / (y1_ - y0_);
        return kTop + (1.0 - t) * height();
    }

    void polyline(const std::vector<double>& xs, const std::vector<double>& ys, const char* stroke,
                  bool dashed = false) {
        body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\""
              << (dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (log_y_ && ys[i] <= 0.0) {
                continue;
            }
            body_ << fmt(px(xs[i])) << ',' << fmt(py(ys[i])) << ' ';
        }
        body_ << "\"/>\n";
    }

    void marker(double x, double y, const char* fill) {
        body_ << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"3\" fill=\"" << fill
              << "\"/>\n";
    }

    void vline(double x, const char* stroke, bool dashed) {
        body_ << "<line x1=\"" << fmt(px(x)) << "\" x2=\"" << fmt(px(x)) << "\" y1=\"" << kTop << "\" y2=\""
              << kTop + height() << "\" stroke=\"" << stroke << "\" stroke-width=\"1.5\""
              << (dashed ? " stroke-dasharray=\"6,4\" class=\"env-marker\"" : "") << "/>\n";
    }

    void bar(double x_center, double half_width, double value, const char* fill) {
        const double top = py(value);
        const double base = py(y0_);
        body_ << "<rect x=\"" << fmt(px(x_center - half_width)) << "\" y=\"" << fmt(top) << "\" width=\""
              << fmt(px(x_center + half_width) - px(x_center - half_width)) << "\" height=\"" << fmt(base - top)
              << "\" fill=\"" << fill << "\"/>\n";
    }

    void error_bar(double x, double lo, double hi) {
        body_ << "<line x1=\"" << fmt(px(x)) << "\" x2=\"" << fmt(px(x)) << "\" y1=\"" << fmt(py(lo)) << "\" y2=\""
              << fmt(py(hi)) << "\" stroke=\"black\"/>\n";
    }

    void label_below(double x, const std::string& text) {
        body_ << "<text x=\"" << fmt(px(x)) << "\" y=\"" << kTop + height() + 16
              << "\" text-anchor=\"middle\" font-size=\"11\">" << text << "</text>\n";
    }

    void legend(const std::vector<std::pair<std::string, const char*>>& entries) {
        double y = kTop + 12;
        for (const auto& [name, stroke] : entries) {
            body_ << "<rect x=\"" << kLeft + width() + 10 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\""
                  << stroke << "\"/>\n<text x=\"" << kLeft + width() + 28 << "\" y=\"" << y
                  << "\" font-size=\"11\">" << name << "</text>\n";
            y += 18;
        }
    }

    void x_ticks(const std::vector<double>& ticks) {
        for (double t : ticks) {
            label_below(t, fmt(t));
        }
    }

    void write(const fs::path& path) const {
        std::ofstream out(path);
        if (!out) {
            throw Error("cannot write " + path.string());
        }
        const double w = kLeft + width() + kRight;
        const double h = kTop + height() + kBottom;
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
            << "\" font-family=\"sans-serif\">\n";
        out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        out << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title_ << "</text>\n";
        out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << width() << "\" height=\"" << height()
            << "\" fill=\"none\" stroke=\"black\"/>\n";
        out << y_ticks();
        out << "<text x=\"" << kLeft + width() / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\" font-size=\"12\">"
            << xlabel_ << "</text>\n";
        out << "<text x=\"14\" y=\"" << kTop + height() / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
            << "transform=\"rotate(-90 14 " << kTop + height() / 2 << ")\">" << ylabel_ << "</text>\n";
        out << body_.str() << "</svg>\n";
    }

private:
    static constexpr double kLeft = 70;
    static constexpr double kRight = 150;
    static constexpr double kTop = 35;
    static constexpr double kBottom = 45;

    static double width() { return 480; }
    static double height() { return 300; }

    std::string y_ticks() const {
        std::ostringstream s;
        std::vector<double> ticks;
        if (log_y_) {
            for (double e = std::round(std::log10(y0_)); e <= std::round(std::log10(y1_)) + 1e-9; e += 1.0) {
                ticks.push_back(std::pow(10.0, e));
            }
        } else {
            for (int i = 0; i <= 5; ++i) {
                ticks.push_back(y0_ + (y1_ - y0_) * i / 5.0);
            }
        }
        for (double t : ticks) {
            const double y = py(t);
            s << "<line x1=\"" << kLeft - 4 << "\" x2=\"" << kLeft << "\" y1=\"" << fmt(y) << "\" y2=\"" << fmt(y)
              << "\" stroke=\"black\"/>\n<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(y + 4)
              << "\" text-anchor=\"end\" font-size=\"11\">";
            if (log_y_) {
                s << "1e" << static_cast<int>(std::round(std::log10(t)));
            } else {
                s << fmt(t);
            }
            s << "</text>\n";
        }
        return s.str();
    }

    std::string title_;
    std::string xlabel_;
    std::string ylabel_;
    double x0_ = 0.0, x1_ = 1.0, y0_ = 0.0, y1_ = 1.0;
    bool log_y_ = false;
    std::ostringstream body_;
};

struct Run {
    fs::path dir;
    experiment::RunSummary summary;
    std::vector<trainer::EpochRecord> metrics;
};

std::vector<Run> load_runs(const std::vector<fs::path>& dirs) {
    std::vector<Run> runs;
    for (const auto& d : dirs) {
        Run r;
        r.dir = d;
        r.summary = experiment::read_summary(d);
        const auto metrics = d / "metrics.jsonl";
        if (!fs::exists(metrics)) {
            throw FormatError("missing " + metrics.string());
        }
        r.metrics = trainer::read_metrics(metrics);
        if (r.metrics.empty()) {
            throw FormatError("empty " + metrics.string());
        }
        runs.push_back(std::move(r));
    }
    return runs;
}

// Method names in first-seen order with their runs.
std::vector<std::pair<std::string, std::vector<const Run*>>> by_method(const std::vector<Run>& runs) {
    std::vector<std::pair<std::string, std::vector<const Run*>>> out;
    for (const auto& r : runs) {
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == r.summary.method; });
        if (it == out.end()) {
            out.push_back({r.summary.method, {&r}});
        } else {
            it->second.push_back(&r);
        }
    }
    return out;
}

std::vector<double> env_markers(const experiment::RunSummary& s) {
    std::vector<double> markers;
    for (double e : s.train_envs) {
        if (s.dataset == "rotated_mnist") {
            const auto idx = static_cast<std::size_t>(e);
            markers.push_back(idx < data::kRotationDegrees.size() ? data::kRotationDegrees[idx] : e);
        } else {
            markers.push_back(e);
        }
    }
    return markers;
}

Figure worst_case(const std::vector<Run>& runs, const fs::path& out) {
    const auto groups = by_method(runs);
    Figure f{out / "worst_case.svg", out / "worst_case.tsv"};
    std::ofstream table(f.table);
    table << "method\tbaseline\truns\tworst_mean\tworst_std\tmean_mean\tmean_std\n";
    Canvas c("Worst-case test accuracy", "method", "accuracy (%)");
    c.set_x(-0.5, static_cast<double>(groups.size()) - 0.5);
    c.set_y(0.0, 100.0);
    std::vector<experiment::RunSummary> summaries;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        std::vector<experiment::RunSummary> members;
        for (const Run* r : groups[i].second) {
            members.push_back(r->summary);
        }
        const auto a = experiment::aggregate(members);
        table << a.method << '\t' << a.baseline << '\t' << a.runs << '\t' << a.worst_mean << '\t' << a.worst_std << '\t'
              << a.avg_mean << '\t' << a.avg_std << '\n';
        const double x = static_cast<double>(i);
        c.bar(x, 0.3, 100.0 * a.worst_mean, a.baseline ? "#9ecae1" : "#3182bd");
        c.error_bar(x, 100.0 * (a.worst_mean - a.worst_std), 100.0 * (a.worst_mean + a.worst_std));
        c.label_below(x, a.method);
    }
    c.legend({{"fixed environments", "#9ecae1"}, {"adaptive", "#3182bd"}});
    c.write(f.svg);
    return f;
}

Figure profile(const std::vector<Run>& runs, const fs::path& out) {
    const auto groups = by_method(runs);
    Figure f{out / "profile.svg", out / "profile.tsv"};
    std::ofstream table(f.table);
    table << "method\tenv\tvalue\taccuracy_mean\n";
    Canvas c("Test accuracy across environments", "environment parameter", "accuracy (%)");
    double lo = 1e300;
    double hi = -1e300;
    for (const auto& r : runs) {
        for (const auto& e : r.summary.test_profile) {
            lo = std::min(lo, e.value);
            hi = std::max(hi, e.value);
        }
    }
    if (!(hi > lo)) {
        hi = lo + 1.0;
    }
    c.set_x(lo, hi);
    c.set_y(0.0, 100.0);
    std::vector<std::pair<std::string, const char*>> legend;
    std::vector<double> ticks;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        std::vector<experiment::RunSummary> members;
        for (const Run* r : groups[i].second) {
            members.push_back(r->summary);
        }
        const auto a = experiment::aggregate(members);
        std::vector<double> xs;
        std::vector<double> ys;
        for (const auto& e : a.profile_mean) {
            table << a.method << '\t' << e.label << '\t' << e.value << '\t' << e.accuracy << '\n';
            xs.push_back(e.value);
            ys.push_back(100.0 * e.accuracy);
        }
        c.polyline(xs, ys, colour(i));
        for (std::size_t k = 0; k < xs.size(); ++k) {
            c.marker(xs[k], ys[k], colour(i));
        }
        if (ticks.empty()) {
            ticks = xs;
        }
        legend.push_back({a.method, colour(i)});
    }
    if (ticks.size() > 6) {
        std::vector<double> thin;
        for (std::size_t k = 0; k < ticks.size(); k += 2) {
            thin.push_back(ticks[k]);
        }
        ticks = thin;
    }
    c.x_ticks(ticks);
    c.legend(legend);
    c.write(f.svg);
    return f;
}

Figure policy_density(const std::vector<Run>& runs, const fs::path& out) {
    Figure f{out / "policy_density.svg", out / "policy_density.tsv"};
    std::ofstream table(f.table);
    table << "run\tmethod\tkind\tx\tdensity\n";
    Canvas c("Learned environment policy", "environment parameter", "density / probability");

    const Run* ref = nullptr;
    std::vector<const Run*> learned;
    for (const auto& r : runs) {
        const auto& kind = r.summary.policy.kind;
        if (kind == "beta" || kind == "categorical") {
            learned.push_back(&r);
        } else if (!ref && kind == "atoms") {
            ref = &r;
        }
    }
    const bool rotated = !runs.empty() && runs.front().summary.dataset == "rotated_mnist";
    const double x_hi = rotated ? 180.0 : 1.0;
    c.set_x(rotated ? -10.0 : 0.0, rotated ? 190.0 : 1.0);

    double y_hi = 1.0;
    std::vector<std::vector<double>> xs(learned.size());
    std::vector<std::vector<double>> ys(learned.size());
    for (std::size_t i = 0; i < learned.size(); ++i) {
        const auto& p = learned[i]->summary.policy;
        const std::string name = learned[i]->dir.filename().string();
        if (p.kind == "beta") {
            const boost::math::beta_distribution<double> dist(p.alpha, p.beta);
            for (int k = 1; k < 200; ++k) {
                const double x = k / 200.0;
                const double d = boost::math::pdf(dist, x);
                xs[i].push_back(x);
                ys[i].push_back(d);
                table << name << '\t' << learned[i]->summary.method << "\tbeta\t" << x << '\t' << d << '\n';
            }
        } else {
            for (std::size_t k = 0; k < p.probabilities.size(); ++k) {
                const double x = k < data::kRotationDegrees.size() ? data::kRotationDegrees[k] : static_cast<double>(k);
                xs[i].push_back(x);
                ys[i].push_back(p.probabilities[k]);
                table << name << '\t' << learned[i]->summary.method << "\tcategorical\t" << x << '\t'
                      << p.probabilities[k] << '\n';
            }
        }
        for (double y : ys[i]) {
            y_hi = std::max(y_hi, y);
        }
    }
    if (rotated) {
        y_hi = 1.0;
    }
    c.set_y(0.0, std::min(y_hi * 1.1, 50.0));
    std::vector<std::pair<std::string, const char*>> legend;
    for (std::size_t i = 0; i < learned.size(); ++i) {
        if (learned[i]->summary.policy.kind == "categorical") {
            const double shift = (static_cast<double>(i) - 0.5 * static_cast<double>(learned.size() - 1)) * 6.0;
            for (std::size_t k = 0; k < xs[i].size(); ++k) {
                c.bar(xs[i][k] + shift, 3.0, ys[i][k], colour(i));
            }
        } else {
            c.polyline(xs[i], ys[i], colour(i));
        }
        legend.push_back({learned[i]->summary.method + " seed " + std::to_string(learned[i]->summary.seed), colour(i)});
    }
    // Dashed markers at the fixed training environments.
    std::vector<double> markers = ref ? env_markers(ref->summary) : std::vector<double>{};
    if (markers.empty() && !learned.empty()) {
        markers = env_markers(learned.front()->summary);
    }
    for (double m : markers) {
        c.vline(m, "#1f77b4", true);
        table << "marker\tfixed\tmarker\t" << m << "\t0\n";
    }
    if (!markers.empty()) {
        legend.push_back({"fixed training envs", "#1f77b4"});
    }
    c.x_ticks(rotated ? std::vector<double>{0, 45, 90, 135, 180} : std::vector<double>{0, 0.2, 0.4, 0.6, 0.8, x_hi});
    c.legend(legend);
    c.write(f.svg);
    return f;
}

Figure loss_variance(const std::vector<Run>& runs, const fs::path& out) {
    Figure f{out / "loss_variance.svg", out / "loss_variance.tsv"};
    std::ofstream table(f.table);
    table << "run\tmethod\tepoch\trisk_variance\n";
    Canvas c("Cross-environment loss variance", "epoch", "variance");
    double lo = 1e300;
    double hi = 0.0;
    int max_epoch = 1;
    for (const auto& r : runs) {
        for (const auto& m : r.metrics) {
            if (m.risk_variance > 0.0 && std::isfinite(m.risk_variance)) {
                lo = std::min(lo, m.risk_variance);
                hi = std::max(hi, m.risk_variance);
            }
            max_epoch = std::max(max_epoch, m.epoch + 1);
        }
    }
    if (hi <= 0.0) {
        lo = 1e-6;
        hi = 1.0;
    }
    const auto [y0, y1] = log_axis(lo, hi);
    c.set_x(0.0, static_cast<double>(max_epoch));
    c.set_y(y0, y1, true);
    std::vector<std::pair<std::string, const char*>> legend;
    const auto groups = by_method(runs);
    for (std::size_t i = 0; i < groups.size(); ++i) {
        for (const Run* r : groups[i].second) {
            std::vector<double> xs;
            std::vector<double> ys;
            for (const auto& m : r->metrics) {
                table << r->dir.filename().string() << '\t' << r->summary.method << '\t' << m.epoch + 1 << '\t'
                      << m.risk_variance << '\n';
                xs.push_back(m.epoch + 1);
                ys.push_back(std::max(m.risk_variance, y0));
            }
            c.polyline(xs, ys, colour(i), r->summary.baseline);
        }
        legend.push_back({groups[i].first, colour(i)});
    }
    std::vector<double> ticks;
    const int step = std::max(1, max_epoch / 6);
    for (int e = 0; e <= max_epoch; e += step) {
        ticks.push_back(e);
    }
    c.x_ticks(ticks);
    c.legend(legend);
    c.write(f.svg);
    return f;
}

} // namespace

std::pair<double, double> log_axis(double lo, double hi, int min_decades) {
    if (!(lo > 0.0) || !(hi >= lo)) {
        throw ConfigError("log axis needs 0 < lo <= hi");
    }
    double e0 = std::floor(std::log10(lo));
    double e1 = std::ceil(std::log10(hi));
    while (e1 - e0 < min_decades) {
        e0 -= 1.0;
        if (e1 - e0 < min_decades) {
            e1 += 1.0;
        }
    }
    return {std::pow(10.0, e0), std::pow(10.0, e1)};
}

std::vector<Figure> plot_runs(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
    if (run_dirs.empty()) {
        throw Error("no run directories given");
    }
    const auto runs = load_runs(run_dirs);
    fs::create_directories(out_dir);
    return {worst_case(runs, out_dir), profile(runs, out_dir), policy_density(runs, out_dir),
            loss_variance(runs, out_dir)};
}

} // namespace uaed::plot
