#include "lpad/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lpad/rng.hpp"

namespace lpad::data {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    cells.push_back(cur);
    return cells;
}

double parse_cell(const std::string& cell, std::int64_t row, const std::string& col) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(cell, &pos);
        while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
        if (pos != cell.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("load_csv: row " + std::to_string(row) + ": non-numeric cell '" +
                                 cell + "' in column '" + col + "'");
    }
}

std::vector<ChannelKind> derive_channel_meta(const Dataset& ds) {
    std::vector<ChannelKind> meta(static_cast<std::size_t>(ds.channels), ChannelKind::binary);
    for (std::int64_t c = 0; c < ds.channels; ++c) {
        for (std::int64_t i = 0; i < ds.n && meta[c] == ChannelKind::binary; ++i) {
            const double* inst = ds.instance(i);
            for (std::int64_t t = 0; t < ds.len; ++t) {
                const double v = inst[c * ds.len + t];
                if (v != 0.0 && v != 1.0) {
                    meta[c] = ChannelKind::continuous;
                    break;
                }
            }
        }
    }
    return meta;
}

}  // namespace

Tensor Dataset::batch(const std::vector<std::int64_t>& idx) const {
    Tensor out(Shape{static_cast<std::int64_t>(idx.size()), channels, len});
    const std::int64_t m = instance_size();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* src = instance(idx[i]);
        std::copy(src, src + m, out.data.begin() + static_cast<std::int64_t>(i) * m);
    }
    return out;
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv: cannot open " + path);

    std::string line;
    std::int64_t row = 0;
    // header (skipping leading comment lines)
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line[0] == '#') continue;
        header = split_line(line);
        break;
    }
    if (header.empty()) throw std::runtime_error("load_csv: missing header row");

    auto find_col = [&](const std::string& name) -> std::int64_t {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<std::int64_t>(i);
        return -1;
    };
    const std::int64_t id_col = find_col(schema.id_col);
    const std::int64_t time_col = find_col(schema.time_col);
    const std::int64_t label_col = find_col(schema.label_col);
    if (id_col < 0) throw std::runtime_error("load_csv: instance-id column absent");
    if (time_col < 0) throw std::runtime_error("load_csv: time column absent");
    if (label_col < 0) throw std::runtime_error("load_csv: label column absent");

    std::vector<std::int64_t> channel_idx;
    std::vector<std::string> channel_names;
    if (schema.channel_cols.empty()) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            const auto ii = static_cast<std::int64_t>(i);
            if (ii == id_col || ii == time_col || ii == label_col) continue;
            channel_idx.push_back(ii);
            channel_names.push_back(header[i]);
        }
    } else {
        for (const std::string& name : schema.channel_cols) {
            const std::int64_t ii = find_col(name);
            if (ii < 0) throw std::runtime_error("load_csv: channel column '" + name + "' absent");
            channel_idx.push_back(ii);
            channel_names.push_back(name);
        }
    }
    if (channel_idx.empty()) throw std::runtime_error("load_csv: no channel columns");

    struct Row {
        double time;
        std::vector<double> vals;
    };
    struct Group {
        std::vector<Row> rows;
        int label = -1;
    };
    std::vector<std::string> order;
    std::map<std::string, Group> groups;

    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line[0] == '#') continue;
        const std::vector<std::string> cells = split_line(line);
        if (cells.size() != header.size()) {
            throw std::runtime_error("load_csv: row " + std::to_string(row) + ": expected " +
                                     std::to_string(header.size()) + " cells, got " +
                                     std::to_string(cells.size()));
        }
        const std::string& id = cells[static_cast<std::size_t>(id_col)];
        auto it = groups.find(id);
        if (it == groups.end()) {
            order.push_back(id);
            it = groups.emplace(id, Group{}).first;
        }
        Row r;
        r.time = parse_cell(cells[static_cast<std::size_t>(time_col)], row, schema.time_col);
        r.vals.reserve(channel_idx.size());
        for (std::size_t c = 0; c < channel_idx.size(); ++c) {
            r.vals.push_back(parse_cell(cells[static_cast<std::size_t>(channel_idx[c])], row,
                                        channel_names[c]));
        }
        const double lab = parse_cell(cells[static_cast<std::size_t>(label_col)], row, schema.label_col);
        if (lab != 0.0 && lab != 1.0) {
            throw std::runtime_error("load_csv: row " + std::to_string(row) +
                                     ": label must be 0 or 1, got '" +
                                     cells[static_cast<std::size_t>(label_col)] + "'");
        }
        if (it->second.label >= 0 && it->second.label != static_cast<int>(lab)) {
            throw std::runtime_error("load_csv: row " + std::to_string(row) +
                                     ": conflicting label for instance '" + id + "'");
        }
        it->second.label = static_cast<int>(lab);
        it->second.rows.push_back(std::move(r));
    }
    if (order.empty()) throw std::runtime_error("load_csv: no data rows");

    const std::int64_t T = static_cast<std::int64_t>(groups[order[0]].rows.size());
    Dataset ds;
    ds.n = static_cast<std::int64_t>(order.size());
    ds.channels = static_cast<std::int64_t>(channel_idx.size());
    ds.len = T;
    ds.values.assign(static_cast<std::size_t>(ds.n * ds.channels * ds.len), 0.0);
    ds.labels.resize(static_cast<std::size_t>(ds.n));
    for (std::int64_t i = 0; i < ds.n; ++i) {
        Group& g = groups[order[static_cast<std::size_t>(i)]];
        if (static_cast<std::int64_t>(g.rows.size()) != T) {
            throw std::runtime_error("load_csv: ragged instance '" + order[static_cast<std::size_t>(i)] +
                                     "': " + std::to_string(g.rows.size()) + " rows, expected " +
                                     std::to_string(T));
        }
        std::stable_sort(g.rows.begin(), g.rows.end(),
                         [](const Row& a, const Row& b) { return a.time < b.time; });
        double* dst = ds.instance(i);
        for (std::int64_t t = 0; t < T; ++t) {
            for (std::int64_t c = 0; c < ds.channels; ++c) {
                dst[c * T + t] = g.rows[static_cast<std::size_t>(t)].vals[static_cast<std::size_t>(c)];
            }
        }
        ds.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(g.label);
    }
    ds.channel_meta = derive_channel_meta(ds);
    return ds;
}

void write_csv(const Dataset& ds, const std::string& path, const std::vector<std::string>& comments) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path);
    for (const auto& c : comments) out << "# " << c << "\n";
    out << "instance_id,time";
    for (std::int64_t c = 0; c < ds.channels; ++c) out << ",c" << c;
    out << ",label\n";
    char buf[64];
    for (std::int64_t i = 0; i < ds.n; ++i) {
        const double* inst = ds.instance(i);
        for (std::int64_t t = 0; t < ds.len; ++t) {
            out << "i" << i << "," << t;
            for (std::int64_t c = 0; c < ds.channels; ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", inst[c * ds.len + t]);
                out << "," << buf;
            }
            out << "," << static_cast<int>(ds.labels[static_cast<std::size_t>(i)]) << "\n";
        }
    }
}

Dataset normalize(const Dataset& ds, NormMode mode, const std::optional<NormStats>& stats) {
    if (stats && stats->mode != mode) {
        throw std::invalid_argument("normalize: provided stats were fitted in a different mode");
    }
    if (ds.norm) {
        // already carrying a normalization: re-applying the same transform is
        // a no-op; anything else is a caller error
        if ((stats && *ds.norm == *stats) || (!stats && ds.norm->mode == mode)) return ds;
        throw std::invalid_argument("normalize: dataset is already normalized with different stats");
    }

    NormStats st;
    if (stats) {
        st = *stats;
        if (static_cast<std::int64_t>(st.p1.size()) != ds.channels) {
            throw std::invalid_argument("normalize: stats channel count " +
                                        std::to_string(st.p1.size()) + " != dataset channels " +
                                        std::to_string(ds.channels));
        }
    } else {
        st.mode = mode;
        st.p1.resize(static_cast<std::size_t>(ds.channels));
        st.p2.resize(static_cast<std::size_t>(ds.channels));
        st.degenerate.assign(static_cast<std::size_t>(ds.channels), 0);
        const std::int64_t per = ds.n * ds.len;
        for (std::int64_t c = 0; c < ds.channels; ++c) {
            if (mode == NormMode::zscore) {
                double m = 0.0;
                for (std::int64_t i = 0; i < ds.n; ++i) {
                    const double* inst = ds.instance(i);
                    for (std::int64_t t = 0; t < ds.len; ++t) m += inst[c * ds.len + t];
                }
                m /= static_cast<double>(per);
                double v = 0.0;
                for (std::int64_t i = 0; i < ds.n; ++i) {
                    const double* inst = ds.instance(i);
                    for (std::int64_t t = 0; t < ds.len; ++t) {
                        const double d = inst[c * ds.len + t] - m;
                        v += d * d;
                    }
                }
                v /= static_cast<double>(per);  // population variance
                st.p1[static_cast<std::size_t>(c)] = m;
                st.p2[static_cast<std::size_t>(c)] = std::sqrt(v);
                if (st.p2[static_cast<std::size_t>(c)] == 0.0) st.degenerate[static_cast<std::size_t>(c)] = 1;
            } else {
                double lo = ds.instance(0)[c * ds.len];
                double hi = lo;
                for (std::int64_t i = 0; i < ds.n; ++i) {
                    const double* inst = ds.instance(i);
                    for (std::int64_t t = 0; t < ds.len; ++t) {
                        lo = std::min(lo, inst[c * ds.len + t]);
                        hi = std::max(hi, inst[c * ds.len + t]);
                    }
                }
                st.p1[static_cast<std::size_t>(c)] = lo;
                st.p2[static_cast<std::size_t>(c)] = hi;
                if (hi == lo) st.degenerate[static_cast<std::size_t>(c)] = 1;
            }
        }
    }

    Dataset out = ds;
    for (std::int64_t c = 0; c < ds.channels; ++c) {
        const bool degen = st.degenerate[static_cast<std::size_t>(c)] != 0;
        const double p1 = st.p1[static_cast<std::size_t>(c)];
        const double p2 = st.p2[static_cast<std::size_t>(c)];
        for (std::int64_t i = 0; i < ds.n; ++i) {
            double* inst = out.instance(i);
            for (std::int64_t t = 0; t < ds.len; ++t) {
                double& x = inst[c * ds.len + t];
                if (st.mode == NormMode::zscore) {
                    x = degen ? x - p1 : (x - p1) / p2;
                } else {
                    x = degen ? x - p1 : (x - p1) / (p2 - p1);
                }
            }
        }
    }
    out.norm = std::move(st);
    return out;
}

std::vector<Dataset> split(const Dataset& ds, const SplitSpec& spec) {
    if (spec.fractions.empty()) throw std::invalid_argument("split: no fractions");
    double fsum = 0.0;
    for (double f : spec.fractions) {
        if (!(f > 0.0)) throw std::invalid_argument("split: fractions must be positive");
        fsum += f;
    }
    if (std::abs(fsum - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");

    const std::size_t ns = spec.fractions.size();
    std::vector<std::int64_t> sizes(ns);
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < ns; ++i) {
        sizes[i] = static_cast<std::int64_t>(std::floor(spec.fractions[i] * static_cast<double>(ds.n)));
        assigned += sizes[i];
    }
    sizes[0] += ds.n - assigned;  // remainder to the first split
    for (std::size_t i = 0; i < ns; ++i) {
        if (sizes[i] <= 0) throw std::invalid_argument("split: split " + std::to_string(i) + " is empty");
    }

    std::vector<std::int64_t> anom, nom;
    for (std::int64_t i = 0; i < ds.n; ++i) {
        (ds.labels[static_cast<std::size_t>(i)] ? anom : nom).push_back(i);
    }
    Rng ra = Rng::derive(spec.seed, "split-anomalous");
    Rng rn = Rng::derive(spec.seed, "split-nominal");
    ra.shuffle(anom);
    rn.shuffle(nom);

    const std::int64_t A = static_cast<std::int64_t>(anom.size());
    std::vector<std::int64_t> acounts(ns);
    std::int64_t aassigned = 0;
    for (std::size_t i = 0; i < ns; ++i) {
        acounts[i] = static_cast<std::int64_t>(std::floor(spec.fractions[i] * static_cast<double>(A)));
        aassigned += acounts[i];
    }
    acounts[0] += A - aassigned;
    for (std::size_t i = 0; i < ns; ++i) {
        if (acounts[i] > sizes[i]) {
            throw std::invalid_argument("split: anomalous instances exceed split " + std::to_string(i));
        }
    }

    std::vector<Dataset> out;
    std::size_t apos = 0, npos = 0;
    for (std::size_t i = 0; i < ns; ++i) {
        std::vector<std::int64_t> idx;
        idx.reserve(static_cast<std::size_t>(sizes[i]));
        for (std::int64_t k = 0; k < acounts[i]; ++k) idx.push_back(anom[apos++]);
        const std::int64_t nn = sizes[i] - acounts[i];
        if (npos + static_cast<std::size_t>(nn) > nom.size()) {
            throw std::invalid_argument("split: nominal instances exhausted for split " + std::to_string(i));
        }
        for (std::int64_t k = 0; k < nn; ++k) idx.push_back(nom[npos++]);
        std::sort(idx.begin(), idx.end());

        Dataset part;
        part.n = sizes[i];
        part.channels = ds.channels;
        part.len = ds.len;
        part.channel_meta = ds.channel_meta;
        part.norm = ds.norm;
        part.values.resize(static_cast<std::size_t>(part.n * part.instance_size()));
        part.labels.resize(static_cast<std::size_t>(part.n));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const double* src = ds.instance(idx[k]);
            std::copy(src, src + ds.instance_size(),
                      part.values.begin() + static_cast<std::int64_t>(k) * ds.instance_size());
            part.labels[k] = ds.labels[static_cast<std::size_t>(idx[k])];
        }
        out.push_back(std::move(part));
    }
    return out;
}

}  // namespace lpad::data
