#include "segdt/metrics.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "segdt/errors.hpp"

namespace segdt {

ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw ShapeError("confusion: pred " + std::to_string(pred.height) + "x" +
                         std::to_string(pred.width) + " vs gt " + std::to_string(gt.height) +
                         "x" + std::to_string(gt.width));
    if (pred.data.empty()) throw ShapeError("confusion: empty masks");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        bool p = pred.data[i] != 0;
        bool g = gt.data[i] != 0;
        if (p && g)
            ++c.tp;
        else if (!p && !g)
            ++c.tn;
        else if (p)
            ++c.fp;
        else
            ++c.fn;
    }
    return c;
}

MetricValues compute_metrics(const ConfusionCounts& c) {
    MetricValues m;
    const double tp = double(c.tp), tn = double(c.tn), fp = double(c.fp), fn = double(c.fn);
    const double n = tp + tn + fp + fn;

    m.dice = (c.tp + c.fp + c.fn) == 0 ? 1.0 : 2.0 * tp / (2.0 * tp + fp + fn);
    m.iou = (c.tp + c.fp + c.fn) == 0 ? 1.0 : tp / (tp + fp + fn);
    m.acc = n == 0 ? 1.0 : (tp + tn) / n;

    if (c.tp + c.fn == 0) {
        // no actual positives; sensitivity is only meaningful if pred agrees
        if (c.fp == 0) {
            m.se = 1.0;
        } else {
            m.se = 0.0;
            m.se_undefined = true;
        }
    } else {
        m.se = tp / (tp + fn);
    }

    if (c.tn + c.fp == 0) {
        m.sp = 1.0;
        m.sp_undefined = true;
    } else {
        m.sp = tn / (tn + fp);
    }
    return m;
}

MetricsReport evaluate_dataset(const std::vector<std::pair<std::string, Mask>>& pred,
                               const std::vector<std::pair<std::string, Mask>>& gt) {
    std::map<std::string, const Mask*> pm, gm;
    for (const auto& [id, m] : pred) {
        if (!pm.emplace(id, &m).second)
            throw DataError("evaluate_dataset: duplicate prediction id " + id);
    }
    for (const auto& [id, m] : gt) {
        if (!gm.emplace(id, &m).second)
            throw DataError("evaluate_dataset: duplicate ground-truth id " + id);
    }
    std::string missing;
    for (const auto& [id, m] : gm)
        if (!pm.count(id)) missing += " " + id;
    if (!missing.empty())
        throw DataError("evaluate_dataset: missing predictions for:" + missing);
    for (const auto& [id, m] : pm)
        if (!gm.count(id)) missing += " " + id;
    if (!missing.empty())
        throw DataError("evaluate_dataset: predictions without ground truth:" + missing);

    MetricsReport r;
    for (const auto& [id, p] : pm) {
        MetricsRow row;
        row.id = id;
        row.counts = confusion(*p, *gm.at(id));
        row.values = compute_metrics(row.counts);
        r.total_counts.tp += row.counts.tp;
        r.total_counts.tn += row.counts.tn;
        r.total_counts.fp += row.counts.fp;
        r.total_counts.fn += row.counts.fn;
        r.rows.push_back(std::move(row));
    }
    if (r.rows.empty()) throw DataError("evaluate_dataset: no pairs to evaluate");
    const double n = double(r.rows.size());
    for (const auto& row : r.rows) {
        r.mean.dice += row.values.dice;
        r.mean.iou += row.values.iou;
        r.mean.acc += row.values.acc;
        r.mean.se += row.values.se;
        r.mean.sp += row.values.sp;
    }
    r.mean.dice /= n;
    r.mean.iou /= n;
    r.mean.acc /= n;
    r.mean.se /= n;
    r.mean.sp /= n;
    return r;
}

namespace {

std::string flags_str(const MetricValues& v) {
    std::string f;
    if (v.se_undefined) f += "se_undefined";
    if (v.sp_undefined) f += f.empty() ? "sp_undefined" : ";sp_undefined";
    return f;
}

void csv_row(std::ostringstream& out, const std::string& id, const MetricValues& v,
             const ConfusionCounts& c) {
    out << id << ',' << v.dice << ',' << v.iou << ',' << v.acc << ',' << v.se << ',' << v.sp
        << ',' << c.tp << ',' << c.tn << ',' << c.fp << ',' << c.fn << ',' << flags_str(v)
        << '\n';
}

} // namespace

std::string report_csv(const MetricsReport& r) {
    std::ostringstream out;
    out.precision(10);
    out << "id,dice,iou,acc,se,sp,tp,tn,fp,fn,flags\n";
    for (const auto& row : r.rows) csv_row(out, row.id, row.values, row.counts);
    csv_row(out, "mean", r.mean, r.total_counts);
    return out.str();
}

std::string report_text(const MetricsReport& r) {
    std::ostringstream out;
    out.precision(4);
    out << std::fixed;
    out << "images " << r.rows.size() << "\n"
        << "dice   " << r.mean.dice << "\n"
        << "iou    " << r.mean.iou << "\n"
        << "acc    " << r.mean.acc << "\n"
        << "se     " << r.mean.se << "\n"
        << "sp     " << r.mean.sp << "\n";
    return out.str();
}

} // namespace segdt
