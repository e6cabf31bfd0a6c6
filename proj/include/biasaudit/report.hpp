#pragma once

// Human-readable tables, verdict JSONL and perplexity-bin charts, all rendered from
// the same verdict objects.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "inference.hpp"
#include "pipelines.hpp"
#include "util.hpp"

namespace biasaudit {

inline std::string effect_tag(EffectBucket b, bool unicode = false) {
    if (unicode) {
        switch (b) {
        case EffectBucket::very_small: return "";
        case EffectBucket::small_lo: return "▽";
        case EffectBucket::small_mid: return "△";
        case EffectBucket::small_hi: return "▲";
        case EffectBucket::medium: return "∗";
        case EffectBucket::large: return "∗∗";
        case EffectBucket::very_large: return "∗∗∗";
        }
    }
    switch (b) {
    case EffectBucket::very_small: return "vsmall";
    case EffectBucket::small_lo: return "s1";
    case EffectBucket::small_mid: return "s2";
    case EffectBucket::small_hi: return "s3";
    case EffectBucket::medium: return "med*";
    case EffectBucket::large: return "large*";
    case EffectBucket::very_large: return "vlarge*";
    }
    return "?";
}

inline std::string significance_tag(Significance s) {
    switch (s) {
    case Significance::significant: return "sig";
    case Significance::marginal: return "marg";
    case Significance::not_significant: return "ns";
    }
    return "?";
}

/// Table cell, e.g. "-1.08 med* sig" or, with Unicode glyphs, "-1.08∗ sig".
inline std::string format_cell(const BiasVerdict& v, bool unicode = false) {
    const std::string score = format_fixed(v.bias_score, 2);
    if (unicode) return score + effect_tag(v.effect.bucket, true) + " " + significance_tag(v.significance);
    return score + " " + effect_tag(v.effect.bucket) + " " + significance_tag(v.significance);
}

inline std::string column_name(const BiasVerdict& v) {
    std::string c = v.contrast.first + "-" + v.contrast.second;
    if (v.scope != "all") c += "/" + v.scope;
    return c;
}

namespace detail {

/// Display width counting UTF-8 code points.
inline std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
}

inline std::string pad(const std::string& s, std::size_t width) {
    const auto w = display_width(s);
    return w >= width ? s : s + std::string(width - w, ' ');
}

inline std::string ci_text(const EffectSize& e) {
    if (!std::isfinite(e.ci_low)) return "no CI";
    return "[" + format_fixed(e.ci_low, 4) + ", " + format_fixed(e.ci_high, 4) + "]";
}

} // namespace detail

struct ReportContext {
    std::string model;
    std::string mode;
    std::string title = "Bias audit";
    bool unicode = false;
};

/// Dimension x contrast table with effect and significance tags, the R^2 range per
/// column, a list of biased cells, failures and notes.
inline std::string render_report(const ReportContext& ctx, const std::vector<BiasVerdict>& verdicts,
                                 const std::vector<CellFailure>& failures = {},
                                 const std::vector<std::string>& notes = {}) {
    std::vector<std::string> rows, cols;
    for (const auto& v : verdicts) {
        if (std::find(rows.begin(), rows.end(), v.dimension) == rows.end()) rows.push_back(v.dimension);
        const auto c = column_name(v);
        if (std::find(cols.begin(), cols.end(), c) == cols.end()) cols.push_back(c);
    }
    auto find = [&](const std::string& r, const std::string& c) -> const BiasVerdict* {
        for (const auto& v : verdicts)
            if (v.dimension == r && column_name(v) == c) return &v;
        return nullptr;
    };

    std::vector<std::vector<std::string>> table;
    table.push_back({"dimension"});
    for (const auto& c : cols) table[0].push_back(c);
    for (const auto& r : rows) {
        std::vector<std::string> line{r};
        for (const auto& c : cols) {
            const auto* v = find(r, c);
            line.push_back(v ? format_cell(*v, ctx.unicode) : "-");
        }
        table.push_back(std::move(line));
    }
    std::vector<std::string> range{"R2 range"};
    for (const auto& c : cols) {
        double lo = INFINITY, hi = -INFINITY;
        for (const auto& v : verdicts)
            if (column_name(v) == c) {
                lo = std::min(lo, v.effect.r2_part);
                hi = std::max(hi, v.effect.r2_part);
            }
        range.push_back(format_fixed(lo, 4) + "-" + format_fixed(hi, 4));
    }
    table.push_back(std::move(range));

    std::vector<std::size_t> width(cols.size() + 1, 0);
    for (const auto& line : table)
        for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], detail::display_width(line[i]));

    std::ostringstream out;
    out << ctx.title << "\n";
    out << "model: " << ctx.model << "  mode: " << ctx.mode << "\n\n";
    for (std::size_t k = 0; k < table.size(); ++k) {
        if (k == table.size() - 1 || k == 1) {
            for (std::size_t i = 0; i < width.size(); ++i) out << (i ? "-+-" : "") << std::string(width[i], '-');
            out << "\n";
        }
        std::string line;
        for (std::size_t i = 0; i < table[k].size(); ++i)
            line += (i ? " | " : "") + detail::pad(table[k][i], width[i]);
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out << line << "\n";
    }
    out << "\nscore > 0: first group of the contrast scores higher";
    if (!verdicts.empty() && verdicts.front().lower_is_stronger) out << " (loss: lower means stronger association)";
    out << "\neffect: ";
    for (auto b : {EffectBucket::very_small, EffectBucket::small_lo, EffectBucket::small_mid, EffectBucket::small_hi,
                   EffectBucket::medium, EffectBucket::large, EffectBucket::very_large})
        out << effect_tag(b, ctx.unicode) << (ctx.unicode && b == EffectBucket::very_small ? "(none)" : "") << "="
            << to_string(b) << " ";
    out << "\nsignificance: sig p<0.05, marg p<=0.10, ns otherwise\n";

    std::vector<const BiasVerdict*> biased;
    for (const auto& v : verdicts)
        if (v.verdict == Verdict::biased) biased.push_back(&v);
    out << "\nbiased cells: " << biased.size() << " of " << verdicts.size() << "\n";
    for (const auto* v : biased)
        out << "  " << v->dimension << " " << column_name(*v) << ": against " << v->label
            << "  score=" << format_general(v->bias_score) << " p=" << format_general(v->p_value)
            << " r2=" << format_fixed(v->effect.r2_part, 4) << " " << detail::ci_text(v->effect) << "\n";

    std::vector<std::string> warns;
    for (const auto& v : verdicts)
        if (v.diagnostics.contains("warnings"))
            for (const auto& w : v.diagnostics.at("warnings"))
                warns.push_back(v.dimension + " " + column_name(v) + ": " + w.get<std::string>());
    if (!warns.empty()) {
        out << "\nwarnings:\n";
        for (const auto& w : warns) out << "  " << w << "\n";
    }
    if (!failures.empty()) {
        out << "\nfailed cells:\n";
        for (const auto& f : failures)
            out << "  " << f.dimension << " " << f.contrast.first << "-" << f.contrast.second
                << (f.scope != "all" ? "/" + f.scope : "") << ": " << f.reason << "\n";
    }
    if (!notes.empty()) {
        out << "\nnotes:\n";
        for (const auto& n : notes) out << "  " << n << "\n";
    }
    return out.str();
}

inline std::string render_bin_table(const std::vector<BinAnalysis>& analyses) {
    std::ostringstream out;
    for (const auto& a : analyses) {
        out << a.dimension << " " << a.contrast.first << "-" << a.contrast.second
            << (a.cumulative ? " (cumulative bins)" : "") << "\n";
        for (const auto& r : a.rows) {
            out << "  " << detail::pad(r.label, 10) << " n=" << r.n_g1 << "/" << r.n_g2 << "  ";
            if (r.verdict)
                out << format_cell(*r.verdict) << " r2=" << format_fixed(r.verdict->effect.r2_part, 4);
            else
                out << "skipped: " << r.skipped;
            out << "\n";
        }
    }
    return out.str();
}

/// Tab-separated chart data: the regular bins plus the ALL row for every analysis.
inline std::string render_chart_tsv(const std::vector<BinAnalysis>& analyses) {
    std::ostringstream out;
    out << "dimension\tcontrast\tbin\tupper\tbias_score\tr2_part\tp_value\tn_g1\tn_g2\n";
    auto na = [](const std::optional<BiasVerdict>& v, double BiasVerdict::*field) {
        return v ? format_general((*v).*field) : std::string("NA");
    };
    for (const auto& a : analyses) {
        for (const auto& r : a.rows) {
            if (r.is_overflow) continue;
            out << a.dimension << '\t' << a.contrast.first << "-" << a.contrast.second << '\t' << r.label << '\t'
                << (r.is_all ? std::string("ALL") : format_general(r.upper)) << '\t'
                << na(r.verdict, &BiasVerdict::bias_score) << '\t'
                << (r.verdict ? format_general(r.verdict->effect.r2_part) : std::string("NA")) << '\t'
                << na(r.verdict, &BiasVerdict::p_value) << '\t' << r.n_g1 << '\t' << r.n_g2 << '\n';
        }
    }
    return out.str();
}

/// Line chart of the bias score per bin (one series per analysis), ALL shown dashed.
inline std::string render_chart_svg(const std::vector<BinAnalysis>& analyses) {
    const double W = 720, H = 360, L = 60, R = 160, T = 30, B = 40;
    double xmax = 1, ymin = 0, ymax = 0;
    for (const auto& a : analyses)
        for (const auto& r : a.rows)
            if (r.verdict) {
                if (!r.is_all && !r.is_overflow) xmax = std::max(xmax, r.upper);
                ymin = std::min(ymin, r.verdict->bias_score);
                ymax = std::max(ymax, r.verdict->bias_score);
            }
    if (ymax - ymin < 1e-12) {
        ymin -= 1;
        ymax += 1;
    }
    auto sx = [&](double x) { return L + (W - L - R) * x / xmax; };
    auto sy = [&](double y) { return T + (H - T - B) * (ymax - y) / (ymax - ymin); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << sy(0) << "\" x2=\"" << W - R << "\" y2=\"" << sy(0)
        << "\" stroke=\"#999\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << (W - R + L) / 2 << "\" y=\"" << H - 8
        << "\" text-anchor=\"middle\" font-size=\"12\">pseudo-perplexity bin (upper edge)</text>\n";
    out << "<text x=\"" << L - 6 << "\" y=\"" << sy(ymax) + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
        << format_fixed(ymax, 2) << "</text>\n";
    out << "<text x=\"" << L - 6 << "\" y=\"" << sy(ymin) + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
        << format_fixed(ymin, 2) << "</text>\n";
    for (std::size_t k = 0; k < analyses.size(); ++k) {
        const auto& a = analyses[k];
        const char* color = colors[k % 6];
        std::string pts;
        const BinRow* all = nullptr;
        for (const auto& r : a.rows) {
            if (r.is_all) all = &r;
            if (r.is_all || r.is_overflow || !r.verdict) continue;
            pts += format_fixed(sx(r.upper), 1) + "," + format_fixed(sy(r.verdict->bias_score), 1) + " ";
            out << "<circle cx=\"" << format_fixed(sx(r.upper), 1) << "\" cy=\""
                << format_fixed(sy(r.verdict->bias_score), 1) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
        }
        if (!pts.empty())
            out << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"" << pts << "\"/>\n";
        if (all && all->verdict)
            out << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << sy(all->verdict->bias_score)
                << "\" y2=\"" << sy(all->verdict->bias_score) << "\" stroke=\"" << color
                << "\" stroke-dasharray=\"4 3\"/>\n";
        out << "<text x=\"" << W - R + 8 << "\" y=\"" << T + 16 * (k + 1) << "\" font-size=\"11\" fill=\"" << color
            << "\">" << a.dimension << " " << a.contrast.first << "-" << a.contrast.second << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << text;
}

} // namespace biasaudit
