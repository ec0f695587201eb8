#include "mega/relation.hpp"

#include <cmath>

namespace mega {

namespace {

constexpr double kLogGuard = 1e-3;

Matrix init_uniform(Rng& rng, int rows, int cols, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-bound, bound);
    return m;
}

}  // namespace

void validate_box(const BoxFeature& box) {
    if (!(box.w > 0.0) || !(box.h > 0.0))
        throw ContractViolation("BoxFeature: nonpositive size " + std::to_string(box.w) + " x " + std::to_string(box.h));
    if (!(box.objectness >= 0.0 && box.objectness <= 1.0))
        throw ContractViolation("BoxFeature: objectness " + std::to_string(box.objectness) + " outside [0,1]");
    for (double x : box.semantic)
        if (!std::isfinite(x)) throw ContractViolation("BoxFeature: non-finite semantic feature");
}

Matrix semantic_matrix(const std::vector<BoxFeature>& boxes) {
    if (boxes.empty()) return Matrix();
    const int d = static_cast<int>(boxes.front().semantic.size());
    Matrix m(static_cast<int>(boxes.size()), d);
    for (int r = 0; r < m.rows(); ++r) {
        if (static_cast<int>(boxes[r].semantic.size()) != d)
            throw ContractViolation("semantic_matrix: inconsistent feature dims");
        for (int c = 0; c < d; ++c) m.at(r, c) = boxes[r].semantic[c];
    }
    return m;
}

RelationParams::RelationParams(const std::string& prefix, int d, int heads, int embed, Rng& rng, Activation h_act)
    : dim(d), num_heads(heads), embed_dim(embed), h_activation(h_act) {
    if (d <= 0 || heads <= 0) throw ContractViolation("RelationParams: dim and heads must be positive");
    if (d % heads != 0) throw ContractViolation("RelationParams: dim " + std::to_string(d) + " not divisible by " +
                                                std::to_string(heads) + " heads");
    if (embed <= 0) throw ContractViolation("RelationParams: embed_dim must be positive");
    const int dk = d / heads;
    for (int m = 0; m < heads; ++m) {
        const std::string tag = prefix + "." + std::to_string(m);
        wq.emplace_back(tag + ".wq", init_uniform(rng, dk, d, d));
        wk.emplace_back(tag + ".wk", init_uniform(rng, dk, d, d));
        wv.emplace_back(tag + ".wv", init_uniform(rng, dk, d, d));
        wg.emplace_back(tag + ".wg", init_uniform(rng, 1, embed, embed));
    }
    out_w = Param(prefix + ".out_w", init_uniform(rng, d, d, d));
    out_b = Param(prefix + ".out_b", Matrix(1, d));
}

std::vector<Param*> RelationParams::param_list() {
    std::vector<Param*> out;
    for (int m = 0; m < num_heads; ++m) {
        out.push_back(&wq[m]);
        out.push_back(&wk[m]);
        out.push_back(&wv[m]);
        out.push_back(&wg[m]);
    }
    out.push_back(&out_w);
    out.push_back(&out_b);
    return out;
}

std::vector<double> relative_position_embedding(const BoxFeature& query, const BoxFeature& reference, int embed_dim) {
    if (embed_dim < 8 || embed_dim % 2 != 0)
        throw ContractViolation("relative_position_embedding: embed_dim must be even and >= 8, got " +
                                std::to_string(embed_dim));
    if (!(query.w > 0.0) || !(query.h > 0.0) || !(reference.w > 0.0) || !(reference.h > 0.0))
        throw ContractViolation("relative_position_embedding: nonpositive box size");

    // Displacements enter as magnitudes relative to the query size; the log is
    // shifted so a zero displacement embeds to exactly zero. Direction is not
    // encoded; only the temporal offset keeps its sign.
    const double v[5] = {
        std::log(std::abs(reference.cx - query.cx) / query.w + kLogGuard) - std::log(kLogGuard),
        std::log(std::abs(reference.cy - query.cy) / query.h + kLogGuard) - std::log(kLogGuard),
        std::log(reference.w / query.w),
        std::log(reference.h / query.h),
        static_cast<double>(reference.frame_index - query.frame_index),
    };

    const int per_component = static_cast<int>(std::lround(embed_dim / 5.0));
    const int pairs = (per_component + 1) / 2;
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(5) * per_component);
    for (double component : v) {
        for (int idx = 0; idx < per_component; ++idx) {
            const int j = idx / 2;
            const double wavelength = pairs > 1 ? std::pow(1000.0, static_cast<double>(j) / (pairs - 1)) : 1.0;
            const double angle = component / wavelength;
            out.push_back(idx % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    out.resize(static_cast<std::size_t>(embed_dim), 0.0);
    return out;
}

Matrix position_embedding_matrix(const std::vector<BoxFeature>& queries, const std::vector<BoxFeature>& references,
                                 int embed_dim) {
    Matrix m(static_cast<int>(queries.size() * references.size()), embed_dim);
    int row = 0;
    for (const BoxFeature& q : queries)
        for (const BoxFeature& r : references) {
            const std::vector<double> e = relative_position_embedding(q, r, embed_dim);
            for (int c = 0; c < embed_dim; ++c) m.at(row, c) = e[c];
            ++row;
        }
    return m;
}

RelationResult relation_core(const Var& queries, const Var& references, const Matrix& pos_embed,
                             RelationParams& params, RelationMode mode, Tape* tape) {
    const int nq = queries.value.rows();
    const int nr = references.value.rows();
    if (nr == 0) throw ContractViolation("relation_core: empty reference set");
    if (queries.value.cols() != params.dim || references.value.cols() != params.dim)
        throw ContractViolation("relation_core: feature dim mismatch, queries " + queries.value.shape_str() +
                                " references " + references.value.shape_str() + " vs dim " + std::to_string(params.dim));
    if (mode == RelationMode::location_based &&
        (pos_embed.rows() != nq * nr || pos_embed.cols() != params.embed_dim))
        throw ContractViolation("relation_core: position embedding shape " + pos_embed.shape_str() + " does not match " +
                                std::to_string(nq) + " x " + std::to_string(nr) + " pairs");

    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(params.head_dim()));
    std::vector<Var> head_feats;
    std::vector<Var> head_weights;
    for (int m = 0; m < params.num_heads; ++m) {
        Var q = matmul(queries, lift(tape, params.wq[m]), true);
        Var k = matmul(references, lift(tape, params.wk[m]), true);
        Var logits = scale(matmul(q, k, true), inv_sqrt_dk);
        Var omega;
        if (mode == RelationMode::location_free) {
            omega = softmax_rows(logits);
        } else {
            Var gate_col = matmul(Var(pos_embed), lift(tape, params.wg[m]), true);
            Var gates = relu(reshape(gate_col, nq, nr));
            omega = gated_softmax_rows(logits, gates);
        }
        head_feats.push_back(matmul(omega, matmul(references, lift(tape, params.wv[m]), true)));
        head_weights.push_back(std::move(omega));
    }
    Var relation = concat_cols(head_feats);
    Var out = linear(add(queries, relation), lift(tape, params.out_w), lift(tape, params.out_b), params.h_activation);
    return RelationResult{std::move(out), std::move(head_weights)};
}

AttentionWeights attention_weights(const std::vector<BoxFeature>& queries, const std::vector<BoxFeature>& references,
                                   RelationParams& params, RelationMode mode) {
    if (references.empty()) throw ContractViolation("attention_weights: empty reference list");
    const Matrix fq = semantic_matrix(queries);
    const Matrix fr = semantic_matrix(references);
    Matrix embed;
    if (mode == RelationMode::location_based) embed = position_embedding_matrix(queries, references, params.embed_dim);
    RelationResult res = relation_core(Var(fq), Var(fr), embed, params, mode, nullptr);
    AttentionWeights out;
    for (Var& w : res.weights) out.heads.push_back(std::move(w.value));
    return out;
}

std::vector<BoxFeature> relation_module(const std::vector<BoxFeature>& queries,
                                        const std::vector<BoxFeature>& references, RelationParams& params,
                                        RelationMode mode) {
    if (references.empty()) throw ContractViolation("relation_module: empty reference list");
    const Matrix fq = semantic_matrix(queries);
    const Matrix fr = semantic_matrix(references);
    Matrix embed;
    if (mode == RelationMode::location_based) embed = position_embedding_matrix(queries, references, params.embed_dim);
    RelationResult res = relation_core(Var(fq), Var(fr), embed, params, mode, nullptr);
    std::vector<BoxFeature> out = queries;
    for (std::size_t i = 0; i < out.size(); ++i) out[i].semantic = res.features.value.row(static_cast<int>(i));
    return out;
}

}  // namespace mega
