#include "gnnood/graph.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "gnnood/errors.hpp"

namespace gnnood {

void Graph::validate() const {
    if (n < 1) {
        throw DataError("Graph: empty graph");
    }
    if (features.rows() != n) {
        throw DataError("Graph: feature rows " + std::to_string(features.rows()) + " != n " +
                        std::to_string(n));
    }
    if (static_cast<index_t>(labels.size()) != n) {
        throw DataError("Graph: label count mismatch");
    }
    if (static_cast<index_t>(env_id.size()) != n) {
        throw DataError("Graph: env_id count mismatch");
    }
    if (!features.all_finite()) {
        throw DataError("Graph: non-finite feature value");
    }
    for (index_t i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= classes) {
            throw DataError("Graph: label out of range at node " + std::to_string(i));
        }
        if (env_id[static_cast<std::size_t>(i)] < 0 || env_id[static_cast<std::size_t>(i)] >= environments) {
            throw DataError("Graph: env_id out of range at node " + std::to_string(i));
        }
    }
    if (adjacency.rows() != n || adjacency.cols() != n) {
        throw DataError("Graph: adjacency shape mismatch");
    }
    const auto& p = adjacency.pattern();
    for (index_t r = 0; r < n; ++r) {
        for (index_t k = p.row_ptr[static_cast<std::size_t>(r)]; k < p.row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
            if (p.col_idx[static_cast<std::size_t>(k)] == r) {
                throw DataError("Graph: self-loop stored at node " + std::to_string(r));
            }
        }
    }
    if (!adjacency.is_symmetric()) {
        throw DataError("Graph: adjacency not symmetric (edge (i,j) stored without (j,i))");
    }

    // Split masks: in-range, pairwise disjoint, required masks nonempty.
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    const std::vector<std::pair<const char*, const std::vector<index_t>*>> masks = {
        {"train", &splits.train},         {"iid_val", &splits.iid_val},
        {"iid_test", &splits.iid_test},   {"ood_val", &splits.ood_val},
        {"ood_test", &splits.ood_test}};
    for (const auto& [name, mask] : masks) {
        for (index_t v : *mask) {
            if (v < 0 || v >= n) {
                throw DataError(std::string("Graph: split ") + name + " references node " +
                                std::to_string(v));
            }
            if (seen[static_cast<std::size_t>(v)]) {
                throw DataError(std::string("Graph: node ") + std::to_string(v) +
                                " appears in more than one split");
            }
            seen[static_cast<std::size_t>(v)] = 1;
        }
    }
    if (splits.train.empty()) {
        throw DataError("Graph: train split empty");
    }
    if (splits.iid_test.empty() || splits.ood_test.empty()) {
        throw DataError("Graph: iid_test / ood_test split empty");
    }
    std::unordered_set<int> train_envs;
    for (index_t v : splits.train) {
        train_envs.insert(env_id[static_cast<std::size_t>(v)]);
    }
    for (index_t v : splits.ood_test) {
        if (train_envs.count(env_id[static_cast<std::size_t>(v)])) {
            throw DataError("Graph: ood_test node " + std::to_string(v) +
                            " shares environment " + std::to_string(env_id[static_cast<std::size_t>(v)]) +
                            " with train");
        }
    }
}

std::vector<index_t> Graph::degrees() const {
    std::vector<index_t> deg(static_cast<std::size_t>(n), 0);
    const auto& p = adjacency.pattern();
    for (index_t r = 0; r < n; ++r) {
        deg[static_cast<std::size_t>(r)] =
            p.row_ptr[static_cast<std::size_t>(r) + 1] - p.row_ptr[static_cast<std::size_t>(r)];
    }
    return deg;
}

SparseMatrix normalize_adjacency(const Graph& g) {
    const index_t n = g.n;
    const auto& ap = g.adjacency.pattern();

    // Pattern of A + I: merge the self-loop into each sorted row.
    auto pat = std::make_shared<SparsePattern>();
    pat->rows = n;
    pat->cols = n;
    pat->row_ptr.resize(static_cast<std::size_t>(n) + 1, 0);
    pat->col_idx.reserve(static_cast<std::size_t>(ap.nnz() + n));
    std::vector<double> inv_sqrt_deg(static_cast<std::size_t>(n));
    for (index_t r = 0; r < n; ++r) {
        const index_t lo = ap.row_ptr[static_cast<std::size_t>(r)];
        const index_t hi = ap.row_ptr[static_cast<std::size_t>(r) + 1];
        const double deg_tilde = static_cast<double>(hi - lo) + 1.0; // + self-loop
        inv_sqrt_deg[static_cast<std::size_t>(r)] = 1.0 / std::sqrt(deg_tilde);
        bool placed_self = false;
        for (index_t k = lo; k < hi; ++k) {
            const index_t c = ap.col_idx[static_cast<std::size_t>(k)];
            if (!placed_self && c > r) {
                pat->col_idx.push_back(r);
                placed_self = true;
            }
            pat->col_idx.push_back(c);
        }
        if (!placed_self) {
            pat->col_idx.push_back(r);
        }
        pat->row_ptr[static_cast<std::size_t>(r) + 1] = static_cast<index_t>(pat->col_idx.size());
    }

    std::vector<double> values(pat->col_idx.size());
    for (index_t r = 0; r < n; ++r) {
        for (index_t k = pat->row_ptr[static_cast<std::size_t>(r)];
             k < pat->row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
            const index_t c = pat->col_idx[static_cast<std::size_t>(k)];
            if (c < r) {
                continue; // filled from the mirrored entry below
            }
            const double v = inv_sqrt_deg[static_cast<std::size_t>(r)] * inv_sqrt_deg[static_cast<std::size_t>(c)];
            values[static_cast<std::size_t>(k)] = v;
            if (c > r) {
                // Locate (c, r) and store the identical value.
                const auto begin = pat->col_idx.begin() + static_cast<std::ptrdiff_t>(pat->row_ptr[static_cast<std::size_t>(c)]);
                const auto end = pat->col_idx.begin() + static_cast<std::ptrdiff_t>(pat->row_ptr[static_cast<std::size_t>(c) + 1]);
                const auto it = std::lower_bound(begin, end, r);
                values[static_cast<std::size_t>(it - pat->col_idx.begin())] = v;
            }
        }
    }
    return SparseMatrix(std::move(pat), std::move(values));
}

SparseMatrix adjacency_from_edges(index_t n, const std::vector<std::pair<index_t, index_t>>& edges) {
    std::set<std::pair<index_t, index_t>> unique;
    for (const auto& [i, j] : edges) {
        if (i < 0 || j < 0 || i >= n || j >= n) {
            throw DataError("edge (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") out of range for n = " + std::to_string(n));
        }
        if (i == j) {
            throw DataError("self-loop (" + std::to_string(i) + ", " + std::to_string(i) +
                            ") not allowed");
        }
        if (i > j) {
            throw DataError("edge (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") must be given with i < j");
        }
        if (!unique.insert({i, j}).second) {
            throw DataError("duplicate edge (" + std::to_string(i) + ", " + std::to_string(j) + ")");
        }
    }
    std::vector<std::vector<index_t>> rows(static_cast<std::size_t>(n));
    for (const auto& [i, j] : unique) {
        rows[static_cast<std::size_t>(i)].push_back(j);
        rows[static_cast<std::size_t>(j)].push_back(i);
    }
    std::vector<index_t> row_ptr(static_cast<std::size_t>(n) + 1, 0);
    std::vector<index_t> col_idx;
    col_idx.reserve(unique.size() * 2);
    for (index_t r = 0; r < n; ++r) {
        auto& cols = rows[static_cast<std::size_t>(r)];
        std::sort(cols.begin(), cols.end());
        col_idx.insert(col_idx.end(), cols.begin(), cols.end());
        row_ptr[static_cast<std::size_t>(r) + 1] = static_cast<index_t>(col_idx.size());
    }
    std::vector<double> values(col_idx.size(), 1.0);
    return SparseMatrix::from_csr(n, n, std::move(row_ptr), std::move(col_idx), std::move(values));
}

namespace {

constexpr const char* kMagic = "GNNOOD 1";

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class LineReader {
public:
    LineReader(std::istream& in, const std::string& path) : in_(in), path_(path) {}

    // Returns false at EOF.
    bool next(std::string& line) {
        if (!std::getline(in_, line)) {
            return false;
        }
        ++lineno_;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        return true;
    }

    std::string require(const char* what) {
        std::string line;
        if (!next(line)) {
            fail(std::string("unexpected end of file, expected ") + what);
        }
        return line;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw DataError(path_ + ":" + std::to_string(lineno_ + 1) + ": " + msg);
    }

    [[noreturn]] void fail_here(const std::string& msg) const {
        throw DataError(path_ + ":" + std::to_string(lineno_) + ": " + msg);
    }

private:
    std::istream& in_;
    std::string path_;
    std::size_t lineno_ = 0;
};

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream iss(s);
    std::string tok;
    while (iss >> tok) {
        out.push_back(tok);
    }
    return out;
}

index_t parse_index(const std::string& tok, const LineReader& r) {
    index_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
        r.fail_here("not an integer: '" + tok + "'");
    }
    return v;
}

double parse_double(const std::string& tok, const LineReader& r) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || tok.empty()) {
        r.fail_here("not a number: '" + tok + "'");
    }
    return v;
}

} // namespace

void save_graph(const Graph& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot open '" + path + "' for writing");
    }
    out << kMagic << "\n";
    out << g.n << " " << g.feature_dim() << " " << g.classes << " " << g.environments << "\n";
    for (index_t i = 0; i < g.n; ++i) {
        out << g.labels[static_cast<std::size_t>(i)] << " " << g.env_id[static_cast<std::size_t>(i)];
        for (index_t j = 0; j < g.feature_dim(); ++j) {
            out << " " << format_double(g.features(i, j));
        }
        out << "\n";
    }
    // Each undirected edge once, upper triangle.
    std::vector<std::pair<index_t, index_t>> edges;
    const auto& p = g.adjacency.pattern();
    for (index_t r = 0; r < g.n; ++r) {
        for (index_t k = p.row_ptr[static_cast<std::size_t>(r)]; k < p.row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
            const index_t c = p.col_idx[static_cast<std::size_t>(k)];
            if (r < c) {
                edges.emplace_back(r, c);
            }
        }
    }
    out << "EDGES " << edges.size() << "\n";
    for (const auto& [i, j] : edges) {
        out << i << " " << j << "\n";
    }
    const std::vector<std::pair<const char*, const std::vector<index_t>*>> masks = {
        {"train", &g.splits.train},       {"iid_val", &g.splits.iid_val},
        {"iid_test", &g.splits.iid_test}, {"ood_val", &g.splits.ood_val},
        {"ood_test", &g.splits.ood_test}};
    for (const auto& [name, mask] : masks) {
        out << "SPLIT " << name << "\n";
        for (std::size_t i = 0; i < mask->size(); ++i) {
            if (i > 0) {
                out << " ";
            }
            out << (*mask)[i];
        }
        out << "\n";
    }
    if (!out) {
        throw DataError("write failed for '" + path + "'");
    }
}

Graph load_graph(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path + "'");
    }
    LineReader r(in, path);

    if (r.require("magic header") != kMagic) {
        r.fail_here(std::string("bad magic, expected '") + kMagic + "'");
    }
    const auto header = split_ws(r.require("header 'N d c E'"));
    if (header.size() != 4) {
        r.fail_here("header must be 'N d c E'");
    }
    Graph g;
    g.n = parse_index(header[0], r);
    const index_t d = parse_index(header[1], r);
    g.classes = static_cast<int>(parse_index(header[2], r));
    g.environments = static_cast<int>(parse_index(header[3], r));
    if (g.n < 1 || d < 1 || g.classes < 1 || g.environments < 1) {
        r.fail_here("header values must be positive");
    }

    g.features = DenseMatrix(g.n, d);
    g.labels.resize(static_cast<std::size_t>(g.n));
    g.env_id.resize(static_cast<std::size_t>(g.n));
    for (index_t i = 0; i < g.n; ++i) {
        const auto toks = split_ws(r.require("node line"));
        if (static_cast<index_t>(toks.size()) != 2 + d) {
            r.fail_here("node line must have label, env and " + std::to_string(d) + " features");
        }
        g.labels[static_cast<std::size_t>(i)] = static_cast<int>(parse_index(toks[0], r));
        g.env_id[static_cast<std::size_t>(i)] = static_cast<int>(parse_index(toks[1], r));
        for (index_t j = 0; j < d; ++j) {
            g.features(i, j) = parse_double(toks[static_cast<std::size_t>(2 + j)], r);
        }
    }

    const auto edge_header = split_ws(r.require("'EDGES m'"));
    if (edge_header.size() != 2 || edge_header[0] != "EDGES") {
        r.fail_here("expected 'EDGES m'");
    }
    const index_t m = parse_index(edge_header[1], r);
    std::vector<std::pair<index_t, index_t>> edges;
    edges.reserve(static_cast<std::size_t>(m));
    for (index_t e = 0; e < m; ++e) {
        const auto toks = split_ws(r.require("edge line"));
        if (toks.size() != 2) {
            r.fail_here("edge line must be 'i j'");
        }
        const index_t i = parse_index(toks[0], r);
        const index_t j = parse_index(toks[1], r);
        if (i >= j) {
            r.fail_here("edges must satisfy i < j, got (" + std::to_string(i) + ", " +
                        std::to_string(j) + ")");
        }
        edges.emplace_back(i, j);
    }
    try {
        g.adjacency = adjacency_from_edges(g.n, edges);
    } catch (const DataError& e) {
        r.fail_here(e.what());
    }

    const std::vector<std::pair<const char*, std::vector<index_t>*>> masks = {
        {"train", &g.splits.train},       {"iid_val", &g.splits.iid_val},
        {"iid_test", &g.splits.iid_test}, {"ood_val", &g.splits.ood_val},
        {"ood_test", &g.splits.ood_test}};
    for (const auto& [name, mask] : masks) {
        const auto head = split_ws(r.require("split header"));
        if (head.size() != 2 || head[0] != "SPLIT" || head[1] != name) {
            r.fail_here(std::string("expected 'SPLIT ") + name + "'");
        }
        for (const auto& tok : split_ws(r.require("split ids"))) {
            mask->push_back(parse_index(tok, r));
        }
    }

    try {
        g.validate();
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
    return g;
}

} // namespace gnnood
