#include "cast/deconfounder.hpp"

#include <cstdio>

namespace cast {

namespace {

Tensor mat_leaf(Tape& t, const Mat& m) {
    std::vector<double> buf(static_cast<size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            buf[static_cast<size_t>(r * m.cols() + c)] = m(r, c);
    return t.leaf(Shape{m.rows(), m.cols()}, buf, false);
}

}  // namespace

Deconfounder::Deconfounder(const STGraph& g, const DeconfounderConfig& c, std::mt19937_64& rng)
    : cfg(c) {
    cfg.validate();
    g.validate();
    Mat b1 = build_boundary_1(g);
    laplacian = cfg.laplacian_scale * hodge_laplacian_1(b1);
    src_select = Mat::Zero(g.edge_count(), g.node_count);
    dst_scatter = Mat::Zero(g.node_count, g.edge_count());
    for (int64_t j = 0; j < g.edge_count(); ++j) {
        src_select(j, g.edges[static_cast<size_t>(j)].src) = 1.0;
        dst_scatter(g.edges[static_cast<size_t>(j)].dst, j) = 1.0;
    }

    edge_encoder = nn::Mlp("edge_enc", {cfg.F_edge, cfg.F, cfg.F}, rng);
    filter = LaguerreCoeffs("hl_filter", cfg.U, rng);
    strength = nn::Linear("strength", cfg.F, cfg.K_b, rng);
    for (int64_t k = 0; k < cfg.K_b; ++k) {
        gcn_self.emplace_back("gcn.self" + std::to_string(k), cfg.F, cfg.F, rng);
        gcn_msg.emplace_back("gcn.msg" + std::to_string(k), cfg.F, cfg.F, rng);
    }
    position = Param("position.P", Shape{g.node_count, cfg.D_p});
    init::gaussian(position, rng, 1.0 / std::sqrt(static_cast<double>(cfg.D_p)));
    position_proj = nn::Linear("position.proj", cfg.D_p, cfg.F, rng);
}

Tensor Deconfounder::edge_encode(Binder& bind, const Tensor& x_ed) const {
    if (x_ed.shape().back() != cfg.F_edge) {
        throw ShapeError("edge_encode: feature width " + shape_str(x_ed.shape()) +
                         " does not match configured F' = " + std::to_string(cfg.F_edge));
    }
    return edge_encoder.forward(bind, x_ed);
}

Tensor Deconfounder::filter_causation(Tape& t, Binder& bind, const Tensor& h_ed) const {
    return laguerre_apply(t, laplacian, h_ed, bind(const_cast<Param&>(filter.theta)));
}

Tensor Deconfounder::causal_strength(Binder& bind, const Tensor& h_ed_hat) const {
    return sigmoid(strength.forward(bind, h_ed_hat));
}

Tensor Deconfounder::causal_gcn(Binder& bind, const Tensor& h_i, const Tensor& a_cau) const {
    Tape& t = *h_i.tape();
    if (a_cau.shape().back() != cfg.K_b) {
        throw ShapeError("causal_gcn: strength columns " + shape_str(a_cau.shape()) +
                         " do not match GCN depth " + std::to_string(cfg.K_b));
    }
    Tensor pick = mat_leaf(t, src_select);
    Tensor put = mat_leaf(t, dst_scatter);
    Tensor h = h_i;
    for (int64_t k = 0; k < cfg.K_b; ++k) {
        Tensor weights = narrow(a_cau, -1, k, 1);               // [B,M,1]
        Tensor sent = matmul(pick, gcn_msg[static_cast<size_t>(k)].forward(bind, h));  // [B,M,F]
        Tensor received = matmul(put, mul(sent, weights));      // [B,N,F]
        Tensor next = add(gcn_self[static_cast<size_t>(k)].forward(bind, h), received);
        h = (k + 1 < cfg.K_b) ? relu(next) : next;              // linear final layer
    }
    return h;
}

Tensor Deconfounder::position_branch(Binder& bind) const {
    return position_proj.forward(bind, bind(const_cast<Param&>(position)));
}

Deconfounder::Result Deconfounder::forward(Tape& t, Binder& bind, const Tensor& h_i,
                                           const Tensor& x_ed) const {
    Result r;
    Tensor h_ed = edge_encode(bind, x_ed);
    r.h_ed_hat = filter_causation(t, bind, h_ed);
    r.a_cau = causal_strength(bind, r.h_ed_hat);
    Tensor relational = causal_gcn(bind, h_i, r.a_cau);
    r.surrogate = add(relational, position_branch(bind));
    return r;
}

void Deconfounder::params(std::vector<Param*>& out) {
    edge_encoder.params(out);
    out.push_back(&filter.theta);
    strength.params(out);
    for (auto& l : gcn_self) l.params(out);
    for (auto& l : gcn_msg) l.params(out);
    out.push_back(&position);
    position_proj.params(out);
}

std::vector<CausalRecord> export_causal(const Tensor& a_cau_window, const STGraph& g,
                                        int64_t window_id) {
    const Shape& s = a_cau_window.shape();
    if (s.size() != 2 || s[0] != g.edge_count()) {
        throw ShapeError("export_causal: expected [M,K_b] strengths, got " + shape_str(s));
    }
    int64_t kb = s[1];
    std::vector<CausalRecord> out;
    out.reserve(static_cast<size_t>(g.edge_count() * kb));
    const auto& v = a_cau_window.data();
    for (int64_t j = 0; j < g.edge_count(); ++j) {
        for (int64_t k = 0; k < kb; ++k) {
            out.push_back({window_id, g.edges[static_cast<size_t>(j)].src,
                           g.edges[static_cast<size_t>(j)].dst, k,
                           v[static_cast<size_t>(j * kb + k)]});
        }
    }
    return out;
}

std::string causal_records_to_json(const std::vector<CausalRecord>& records) {
    std::string out = "[\n";
    char buf[400];
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        std::snprintf(buf, sizeof(buf),
                      "  {\"window_id\": %lld, \"src\": %lld, \"dst\": %lld, \"layer\": %lld, "
                      "\"strength\": %.17g}%s\n",
                      static_cast<long long>(r.window_id), static_cast<long long>(r.src),
                      static_cast<long long>(r.dst), static_cast<long long>(r.layer), r.strength,
                      i + 1 < records.size() ? "," : "");
        out += buf;
    }
    out += "]\n";
    return out;
}

}  // namespace cast
