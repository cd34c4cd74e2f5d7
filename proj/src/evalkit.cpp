#include "mmnet/evalkit.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mmnet/error.hpp"

namespace fs = std::filesystem;

namespace mmnet {

void EvalConfig::validate() const
{
    if (protocol != "ptb" && protocol != "vot-lite")
        throw ConfigError("unknown protocol '" + protocol + "' (expected ptb or vot-lite)");
    if (reinit_skip < 1) throw ConfigError("reinit_skip must be >= 1");
    if (burnin < 0) throw ConfigError("burnin must be >= 0");
    if (workers < 0) throw ConfigError("workers must be >= 0");
}

double iou(const Box& a, const Box& b) { return box_iou(a, b); }

double cle(const Box& a, const Box& b) { return std::hypot(a.cx() - b.cx(), a.cy() - b.cy()); }

namespace {

void require_same_length(const std::vector<Box>& pred, const std::vector<Box>& gt)
{
    if (pred.size() != gt.size())
        throw InputError("trajectory has " + std::to_string(pred.size()) + " boxes but ground truth has " +
                         std::to_string(gt.size()));
    if (gt.empty()) throw InputError("empty trajectory");
}

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

} // namespace

Curve precision_curve(const std::vector<Box>& pred, const std::vector<Box>& gt)
{
    require_same_length(pred, gt);
    std::vector<double> errs(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) errs[i] = cle(pred[i], gt[i]);
    Curve c;
    for (int tau = 0; tau <= 50; ++tau) {
        std::size_t hit = 0;
        for (double e : errs) hit += e <= tau;
        c.thresholds.push_back(tau);
        c.values.push_back(static_cast<double>(hit) / static_cast<double>(errs.size()));
    }
    return c;
}

double precision_at_20(const Curve& precision) { return precision.values.at(20); }

Curve success_curve(const std::vector<Box>& pred, const std::vector<Box>& gt)
{
    require_same_length(pred, gt);
    std::vector<double> ov(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) ov[i] = iou(pred[i], gt[i]);
    Curve c;
    for (int k = 0; k <= 20; ++k) {
        const double tau = k / 20.0;
        std::size_t hit = 0;
        for (double o : ov) hit += o > tau;
        c.thresholds.push_back(tau);
        c.values.push_back(static_cast<double>(hit) / static_cast<double>(ov.size()));
    }
    return c;
}

double success_auc(const Curve& success)
{
    double s = 0;
    for (double v : success.values) s += v;
    return success.values.empty() ? 0.0 : s / static_cast<double>(success.values.size());
}

VotLiteResult vot_lite(const TrackerRunner& runner, const std::vector<Box>& gt, int reinit_skip, int burnin)
{
    if (reinit_skip < 1) throw ConfigError("reinit_skip must be >= 1");
    if (burnin < 0) throw ConfigError("burnin must be >= 0");
    if (gt.size() < static_cast<std::size_t>(reinit_skip) + 2)
        throw InputError("sequence of " + std::to_string(gt.size()) + " frames is shorter than reinit_skip + 2");
    VotLiteResult r;
    r.overlaps.assign(gt.size(), 0.0);
    double acc_sum = 0;
    std::size_t acc_n = 0;
    std::size_t f = 0;
    while (f < gt.size()) {
        runner.init(f, gt[f]);
        r.overlaps[f] = 1.0;
        const std::size_t init_at = f;
        ++f;
        bool failed = false;
        for (; f < gt.size(); ++f) {
            const double o = iou(runner.update(f), gt[f]);
            if (o <= 0.0) {
                ++r.robustness;
                r.overlaps[f] = 0.0;
                f += static_cast<std::size_t>(reinit_skip);
                failed = true;
                break;
            }
            r.overlaps[f] = o;
            if (f - init_at >= static_cast<std::size_t>(burnin)) {
                acc_sum += o;
                ++acc_n;
            }
        }
        if (!failed) break;
    }
    r.accuracy = acc_n > 0 ? acc_sum / static_cast<double>(acc_n) : kNan;
    double s = 0;
    for (double o : r.overlaps) s += o;
    r.eao_lite = s / static_cast<double>(r.overlaps.size());
    return r;
}

SequenceMetrics::SequenceMetrics() : accuracy(kNan), robustness(kNan), eao_lite(kNan) {}

SequenceMetrics evaluate_trajectory(const std::string& name, const std::vector<Box>& pred, const std::vector<Box>& gt)
{
    SequenceMetrics m;
    m.name = name;
    m.precision = precision_curve(pred, gt);
    m.success = success_curve(pred, gt);
    m.pre20 = precision_at_20(m.precision);
    m.auc = success_auc(m.success);
    return m;
}

SequenceMetrics MetricReport::aggregate() const
{
    SequenceMetrics a;
    a.name = "mean";
    if (sequences.empty()) return a;
    const double n = static_cast<double>(sequences.size());
    a.precision = sequences[0].precision;
    a.success = sequences[0].success;
    for (auto& v : a.precision.values) v = 0;
    for (auto& v : a.success.values) v = 0;
    a.pre20 = a.auc = 0;
    double acc = 0, rob = 0, eao = 0;
    for (const auto& s : sequences) {
        for (std::size_t i = 0; i < a.precision.values.size(); ++i) a.precision.values[i] += s.precision.values.at(i) / n;
        for (std::size_t i = 0; i < a.success.values.size(); ++i) a.success.values[i] += s.success.values.at(i) / n;
        a.pre20 += s.pre20;
        a.auc += s.auc;
        acc += s.accuracy;
        rob += s.robustness;
        eao += s.eao_lite;
    }
    a.pre20 /= n;
    a.auc /= n;
    a.accuracy = acc / n;
    a.robustness = rob / n;
    a.eao_lite = eao / n;
    return a;
}

// ---------------------------------------------------------------- report files

namespace {

std::string num(double v)
{
    if (std::isnan(v)) return "nan";
    return format_double(v);
}

double parse_num(const std::string& s)
{
    if (s == "nan") return kNan;
    return parse_double(s);
}

void write_file(const fs::path& file, const std::string& text)
{
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out << text;
    if (!out) throw IoError("write failed: " + file.string());
}

std::string report_header(const std::string& protocol)
{
    std::string h = "# protocol=" + protocol + "\n";
    if (protocol == "ptb") {
        h += "# accuracy, robustness and eao_lite are not defined for this protocol (nan)\n";
    } else {
        h += "# eao_lite: mean per-frame overlap of one reset run with zeros from failure until re-init;"
             " not the official sequence-length-weighted EAO\n";
    }
    return h + kReportColumns + "\n";
}

std::string row(const SequenceMetrics& m)
{
    return m.name + "," + num(m.pre20) + "," + num(m.auc) + "," + num(m.accuracy) + "," + num(m.robustness) + "," +
           num(m.eao_lite) + "\n";
}

std::string curve_csv(const Curve& c)
{
    std::string s = "tau,value\n";
    for (std::size_t i = 0; i < c.values.size(); ++i) s += num(c.thresholds[i]) + "," + num(c.values[i]) + "\n";
    return s;
}

std::string safe_name(const std::string& name)
{
    std::string out;
    for (char ch : name) out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_') ? ch : '_';
    return out.empty() ? "seq" : out;
}

std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char ch : s) {
        switch (ch) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += ch;
        }
    }
    return out;
}

} // namespace

std::string curve_svg(const Curve& curve, const std::string& title, const std::string& x_label)
{
    constexpr double W = 400, H = 300, L = 50, R = 20, T = 30, B = 40;
    double x_max = 0;
    for (double t : curve.thresholds) x_max = std::max(x_max, t);
    if (x_max <= 0) x_max = 1;
    auto px = [&](double x) { return L + (W - L - R) * x / x_max; };
    auto py = [&](double y) { return H - B - (H - T - B) * y; };
    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
      << "</text>\n"
      << "<path d=\"M " << L << ' ' << T << " L " << L << ' ' << H - B << " L " << W - R << ' ' << H - B
      << "\" stroke=\"black\" fill=\"none\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << xml_escape(x_label) << "</text>\n"
      << "<text x=\"" << L - 8 << "\" y=\"" << py(1) + 4 << "\" text-anchor=\"end\" font-size=\"10\">1</text>\n"
      << "<text x=\"" << L - 8 << "\" y=\"" << py(0) + 4 << "\" text-anchor=\"end\" font-size=\"10\">0</text>\n"
      << "<path d=\"";
    for (std::size_t i = 0; i < curve.values.size(); ++i)
        s << (i == 0 ? "M " : " L ") << px(curve.thresholds[i]) << ' ' << py(curve.values[i]);
    s << "\" stroke=\"steelblue\" stroke-width=\"2\" fill=\"none\"/>\n</svg>\n";
    return s.str();
}

void write_report(const MetricReport& report, const fs::path& out_dir, bool plots)
{
    std::error_code ec;
    fs::create_directories(out_dir / "curves", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "curves").string() + ": " + ec.message());

    std::string seq_csv = report_header(report.protocol);
    for (const auto& m : report.sequences) seq_csv += row(m);
    write_file(out_dir / "sequences.csv", seq_csv);

    const auto agg = report.aggregate();
    write_file(out_dir / "aggregate.csv", report_header(report.protocol) + row(agg));

    std::vector<const SequenceMetrics*> all;
    for (const auto& m : report.sequences) all.push_back(&m);
    all.push_back(&agg);
    for (const auto* m : all) {
        const std::string base = safe_name(m->name);
        write_file(out_dir / "curves" / (base + "_precision.csv"), curve_csv(m->precision));
        write_file(out_dir / "curves" / (base + "_success.csv"), curve_csv(m->success));
        if (plots) {
            write_file(out_dir / "curves" / (base + "_precision.svg"),
                       curve_svg(m->precision, m->name + " precision", "location error threshold (px)"));
            write_file(out_dir / "curves" / (base + "_success.svg"),
                       curve_svg(m->success, m->name + " success", "overlap threshold"));
        }
    }
}

std::vector<ReportRow> read_report_csv(const fs::path& file)
{
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::vector<ReportRow> rows;
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != kReportColumns) throw FormatError(file.string() + ": unexpected columns '" + line + "'");
            header = true;
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 6) throw FormatError(file.string() + ": bad row '" + line + "'");
        rows.push_back({cells[0], parse_num(cells[1]), parse_num(cells[2]), parse_num(cells[3]), parse_num(cells[4]),
                        parse_num(cells[5])});
    }
    return rows;
}

} // namespace mmnet
