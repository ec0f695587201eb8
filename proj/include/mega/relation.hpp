#pragma once

#include <string>
#include <vector>

#include "mega/common.hpp"
#include "mega/numerics.hpp"

namespace mega {

// One candidate box: semantic feature vector plus geometry in normalized
// image units, the source frame index, and the proposal objectness score.
struct BoxFeature {
    std::vector<double> semantic;
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;
    int frame_index = 0;
    double objectness = 0.0;
};

// Throws ContractViolation when the box breaks its invariants (nonpositive
// size, non-finite semantic, objectness outside [0,1]).
void validate_box(const BoxFeature& box);

// Stacks the semantic vectors of a box list into an n x d matrix; all boxes
// must share the same dimension.
Matrix semantic_matrix(const std::vector<BoxFeature>& boxes);

enum class RelationMode { location_free, location_based };

// Parameters of one multi-head relation module: per-head query/key/value
// projections (d -> d/M), per-head geometric gate weights over the position
// embedding, and the output transform h (fully connected d -> d, optionally
// followed by ReLU).
struct RelationParams {
    int dim = 0;
    int num_heads = 0;
    int embed_dim = 0;
    Activation h_activation = Activation::relu;
    std::vector<Param> wq;  // per head, (d/M) x d
    std::vector<Param> wk;  // per head, (d/M) x d
    std::vector<Param> wv;  // per head, (d/M) x d
    std::vector<Param> wg;  // per head, 1 x embed_dim
    Param out_w;            // d x d
    Param out_b;            // 1 x d

    RelationParams() = default;
    RelationParams(const std::string& prefix, int d, int num_heads, int embed_dim, Rng& rng,
                   Activation h_activation = Activation::relu);

    int head_dim() const { return dim / num_heads; }
    std::vector<Param*> param_list();
};

// Per-head attention weight matrices, shape |queries| x |references|, rows
// nonnegative and summing to 1.
struct AttentionWeights {
    std::vector<Matrix> heads;
};

// Sinusoidal embedding of the relative geometry and time offset between two
// boxes. The displacement components use magnitudes (direction is not
// encoded); the temporal offset keeps its sign. embed_dim must be even and
// at least 8.
std::vector<double> relative_position_embedding(const BoxFeature& query, const BoxFeature& reference, int embed_dim);

// Embeddings for every (query, reference) pair, one row per pair in query
// major order: row q * |references| + r.
Matrix position_embedding_matrix(const std::vector<BoxFeature>& queries, const std::vector<BoxFeature>& references,
                                 int embed_dim);

// Core of the relation module on feature matrices. pos_embed holds one row
// per (query, reference) pair and is only read in location_based mode (pass
// an empty matrix otherwise). tape == nullptr runs forward only.
struct RelationResult {
    Var features;              // n_q x d, after residual add and h
    std::vector<Var> weights;  // per head, n_q x n_r
};
RelationResult relation_core(const Var& queries, const Var& references, const Matrix& pos_embed,
                             RelationParams& params, RelationMode mode, Tape* tape);

// Attention weights alone, forward only.
AttentionWeights attention_weights(const std::vector<BoxFeature>& queries, const std::vector<BoxFeature>& references,
                                   RelationParams& params, RelationMode mode);

// Full relation module on box lists: each query's semantic feature is augmented
// by the weighted reference features, residually added, and passed through h.
// Geometry, frame_index, and objectness pass through untouched.
std::vector<BoxFeature> relation_module(const std::vector<BoxFeature>& queries,
                                        const std::vector<BoxFeature>& references, RelationParams& params,
                                        RelationMode mode);

}  // namespace mega
