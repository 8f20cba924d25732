// SPDX-License-Identifier: Apache-2.0

#include "rlab/policy.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "rlab/rng.hpp"

namespace rlab {

void ModelConfig::validate() const {
    if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
    if (context_window < 1) throw std::invalid_argument("context_window must be >= 1");
    if (embed_dim < 1) throw std::invalid_argument("embed_dim must be >= 1");
    if (num_experts < 1) throw std::invalid_argument("num_experts must be >= 1");
    if (top_k < 1 || top_k > num_experts) throw std::invalid_argument("top_k must be in [1, num_experts]");
}

double ModelConfig::log_vocab() const { return std::log(static_cast<double>(vocab_size)); }

ParamLayout ParamLayout::of(const ModelConfig& c) {
    ParamLayout l;
    std::size_t at = 0;
    l.embedding = at;
    at += c.vocab_size * c.embed_dim;
    l.expert_w = at;
    at += c.num_experts * c.embed_dim * c.embed_dim;
    l.expert_b = at;
    at += c.num_experts * c.embed_dim;
    l.router_w = at;
    at += c.num_experts * c.embed_dim;
    l.router_b = at;
    at += c.num_experts;
    l.output_w = at;
    at += c.vocab_size * c.embed_dim;
    l.output_b = at;
    at += c.vocab_size;
    l.size = at;
    return l;
}

PolicyParams PolicyParams::initialize(const ModelConfig& config) {
    config.validate();
    PolicyParams p{config, std::vector<double>(ParamLayout::of(config).size)};
    Rng rng(config.seed);
    for (auto& v : p.values) v = rng.uniform(-0.1, 0.1);
    return p;
}

bool PolicyParams::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

namespace {

// Intermediate values of one forward pass, kept for the backward pass.
struct Activations {
    std::vector<double> h0;
    std::vector<double> gate_logits;
    std::vector<std::size_t> selected;
    std::vector<double> gates;
    std::vector<std::vector<double>> expert_out;  // tanh outputs, one per selected expert
    std::vector<double> h1;
    std::vector<double> logits;
};

void check_context(const ModelConfig& c, std::span<const Token> context) {
    if (context.empty()) throw std::invalid_argument("context must be nonempty");
    if (context.size() > c.context_window) {
        throw std::invalid_argument("context length " + std::to_string(context.size()) + " exceeds window " +
                                    std::to_string(c.context_window));
    }
    for (Token t : context) {
        if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size) {
            throw std::out_of_range("token " + std::to_string(t) + " outside vocabulary");
        }
    }
}

// Weight of each vocabulary entry's embedding in h0.
std::vector<std::pair<Token, double>> context_weights(std::span<const Token> context) {
    std::vector<std::pair<Token, double>> w;
    const double inv_n = 1.0 / static_cast<double>(context.size());
    for (Token t : context) w.emplace_back(t, inv_n);
    w.emplace_back(context.back(), 1.0);
    return w;
}

std::vector<std::size_t> top_k_by_logit(std::span<const double> z, std::size_t k) {
    std::vector<std::size_t> idx(z.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
    idx.resize(k);
    return idx;
}

std::vector<double> softmax_over(std::span<const double> z, std::span<const std::size_t> subset) {
    double m = -INFINITY;
    for (auto e : subset) m = std::max(m, z[e]);
    std::vector<double> g(subset.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < subset.size(); ++i) {
        g[i] = std::exp(z[subset[i]] - m);
        sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
}

void check_override(const ModelConfig& c, const RouterDecision& d) {
    if (d.experts.size() != c.top_k) throw std::invalid_argument("router override must select top_k experts");
    for (std::size_t i = 0; i < d.experts.size(); ++i) {
        if (d.experts[i] >= c.num_experts) throw std::out_of_range("router override expert index out of range");
        for (std::size_t j = 0; j < i; ++j) {
            if (d.experts[j] == d.experts[i]) throw std::invalid_argument("router override repeats an expert");
        }
    }
}

Activations run_forward(const PolicyParams& params, std::span<const Token> context, const ForwardOptions& opt) {
    const auto& c = params.config;
    check_context(c, context);
    const auto L = params.layout();
    const std::size_t D = c.embed_dim;
    const std::size_t E = c.num_experts;
    const double* th = params.values.data();

    Activations a;
    a.h0.assign(D, 0.0);
    for (auto [tok, w] : context_weights(context)) {
        const double* emb = th + L.embedding + static_cast<std::size_t>(tok) * D;
        for (std::size_t d = 0; d < D; ++d) a.h0[d] += w * emb[d];
    }

    a.gate_logits.assign(E, 0.0);
    for (std::size_t e = 0; e < E; ++e) {
        const double* row = th + L.router_w + e * D;
        double s = th[L.router_b + e];
        for (std::size_t d = 0; d < D; ++d) s += row[d] * a.h0[d];
        a.gate_logits[e] = s;
    }
    if (!opt.gate_noise.empty()) {
        if (opt.gate_noise.size() != E) throw std::invalid_argument("gate noise must have num_experts entries");
        for (std::size_t e = 0; e < E; ++e) a.gate_logits[e] += opt.gate_noise[e];
    }

    if (opt.router_override) {
        if (opt.router_override->empty()) {
            throw std::invalid_argument("router override does not cover the MoE invocation");
        }
        const auto& d = opt.router_override->front();
        check_override(c, d);
        a.selected = d.experts;
    } else {
        a.selected = top_k_by_logit(a.gate_logits, c.top_k);
    }
    a.gates = softmax_over(a.gate_logits, a.selected);

    a.h1 = a.h0;
    a.expert_out.reserve(a.selected.size());
    for (std::size_t k = 0; k < a.selected.size(); ++k) {
        const std::size_t e = a.selected[k];
        const double* W = th + L.expert_w + e * D * D;
        const double* b = th + L.expert_b + e * D;
        std::vector<double> out(D);
        for (std::size_t i = 0; i < D; ++i) {
            double s = b[i];
            for (std::size_t j = 0; j < D; ++j) s += W[i * D + j] * a.h0[j];
            out[i] = std::tanh(s);
            a.h1[i] += a.gates[k] * out[i];
        }
        a.expert_out.push_back(std::move(out));
    }

    a.logits.assign(c.vocab_size, 0.0);
    for (std::size_t v = 0; v < c.vocab_size; ++v) {
        const double* row = th + L.output_w + v * D;
        double s = th[L.output_b + v];
        for (std::size_t d = 0; d < D; ++d) s += row[d] * a.h1[d];
        a.logits[v] = s;
    }
    return a;
}

// Backpropagates d(objective)/d(logits) into grad.
void run_backward(const PolicyParams& params, std::span<const Token> context, const Activations& a,
                  std::span<const double> dlogits, std::span<double> grad) {
    const auto& c = params.config;
    const auto L = params.layout();
    const std::size_t D = c.embed_dim;
    const double* th = params.values.data();

    std::vector<double> dh1(D, 0.0);
    for (std::size_t v = 0; v < c.vocab_size; ++v) {
        const double g = dlogits[v];
        if (g == 0.0) continue;
        const double* row = th + L.output_w + v * D;
        double* grow = grad.data() + L.output_w + v * D;
        for (std::size_t d = 0; d < D; ++d) {
            grow[d] += g * a.h1[d];
            dh1[d] += g * row[d];
        }
        grad[L.output_b + v] += g;
    }

    std::vector<double> dh0 = dh1;  // residual path
    std::vector<double> dgate(a.selected.size(), 0.0);
    for (std::size_t k = 0; k < a.selected.size(); ++k) {
        const std::size_t e = a.selected[k];
        const auto& out = a.expert_out[k];
        const double* W = th + L.expert_w + e * D * D;
        double* gW = grad.data() + L.expert_w + e * D * D;
        double* gb = grad.data() + L.expert_b + e * D;
        for (std::size_t i = 0; i < D; ++i) {
            dgate[k] += dh1[i] * out[i];
            const double dpre = a.gates[k] * dh1[i] * (1.0 - out[i] * out[i]);
            gb[i] += dpre;
            for (std::size_t j = 0; j < D; ++j) {
                gW[i * D + j] += dpre * a.h0[j];
                dh0[j] += dpre * W[i * D + j];
            }
        }
    }

    // Softmax over the selected gate logits.
    double weighted = 0.0;
    for (std::size_t k = 0; k < a.selected.size(); ++k) weighted += a.gates[k] * dgate[k];
    for (std::size_t k = 0; k < a.selected.size(); ++k) {
        const std::size_t e = a.selected[k];
        const double dz = a.gates[k] * (dgate[k] - weighted);
        const double* row = th + L.router_w + e * D;
        double* grow = grad.data() + L.router_w + e * D;
        for (std::size_t d = 0; d < D; ++d) {
            grow[d] += dz * a.h0[d];
            dh0[d] += dz * row[d];
        }
        grad[L.router_b + e] += dz;
    }

    for (auto [tok, w] : context_weights(context)) {
        double* gemb = grad.data() + L.embedding + static_cast<std::size_t>(tok) * D;
        for (std::size_t d = 0; d < D; ++d) gemb[d] += w * dh0[d];
    }
}

RouterDecision to_decision(const Activations& a, std::size_t position) {
    return RouterDecision{position, a.selected, a.gates};
}

// log-softmax at temperature 1, plus the entropy of the same distribution.
void logprob_and_entropy(std::span<const double> logits, Token target, double& logprob, double& entropy,
                         std::vector<double>& probs) {
    probs = token_distribution(logits, 1.0);
    double m = -INFINITY;
    for (double l : logits) m = std::max(m, l);
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - m);
    logprob = logits[static_cast<std::size_t>(target)] - m - std::log(sum);
    entropy = token_entropy(probs);
}

}  // namespace

ForwardResult forward_logits(const PolicyParams& params, std::span<const Token> context,
                             const ForwardOptions& options) {
    auto a = run_forward(params, context, options);
    for (double l : a.logits) {
        if (!std::isfinite(l)) throw std::domain_error("non-finite logits");
    }
    ForwardResult r;
    r.decisions.push_back(to_decision(a, context.size() - 1));
    r.logits = std::move(a.logits);
    return r;
}

std::vector<double> token_distribution(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    double m = -INFINITY;
    for (double l : logits) {
        if (!std::isfinite(l)) throw std::domain_error("non-finite logits");
        m = std::max(m, l);
    }
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - m) / temperature);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

double token_entropy(std::span<const double> probabilities) {
    double h = 0.0;
    for (double p : probabilities) {
        if (p > 0.0) h -= p * std::log(p);
    }
    // Rounding can push a near-degenerate sum slightly negative.
    return std::max(h, 0.0);
}

std::vector<TokenStep> sequence_logprobs(const PolicyParams& params, std::span<const Token> prompt,
                                         std::span<const Token> response,
                                         std::optional<std::span<const RouterDecision>> router_trace) {
    if (router_trace && router_trace->size() < response.size()) {
        throw std::invalid_argument("router trace shorter than response");
    }
    if (prompt.size() + response.size() > params.config.context_window) {
        throw std::invalid_argument("prompt + response exceed the context window");
    }
    std::vector<Token> context(prompt.begin(), prompt.end());
    std::vector<TokenStep> steps;
    steps.reserve(response.size());
    std::vector<double> probs;
    for (std::size_t t = 0; t < response.size(); ++t) {
        ForwardOptions opt;
        if (router_trace) opt.router_override = router_trace->subspan(t, 1);
        const auto a = run_forward(params, context, opt);
        TokenStep s{response[t], 0.0, 0.0};
        if (response[t] < 0 || static_cast<std::size_t>(response[t]) >= params.config.vocab_size) {
            throw std::out_of_range("response token outside vocabulary");
        }
        logprob_and_entropy(a.logits, response[t], s.logprob, s.entropy, probs);
        steps.push_back(s);
        context.push_back(response[t]);
    }
    return steps;
}

void accumulate_logprob_gradient(const PolicyParams& params, std::span<const Token> prompt,
                                 std::span<const Token> response, std::span<const double> weights,
                                 std::optional<std::span<const RouterDecision>> router_trace,
                                 std::span<double> grad) {
    if (weights.size() != response.size()) throw std::invalid_argument("one weight per response token required");
    if (grad.size() != params.values.size()) throw std::invalid_argument("gradient buffer has wrong size");
    if (router_trace && router_trace->size() < response.size()) {
        throw std::invalid_argument("router trace shorter than response");
    }
    std::vector<Token> context(prompt.begin(), prompt.end());
    std::vector<double> dlogits(params.config.vocab_size);
    for (std::size_t t = 0; t < response.size(); ++t) {
        if (weights[t] != 0.0) {
            ForwardOptions opt;
            if (router_trace) opt.router_override = router_trace->subspan(t, 1);
            const auto a = run_forward(params, context, opt);
            const auto p = token_distribution(a.logits, 1.0);
            for (std::size_t v = 0; v < dlogits.size(); ++v) dlogits[v] = -weights[t] * p[v];
            dlogits[static_cast<std::size_t>(response[t])] += weights[t];
            run_backward(params, context, a, dlogits, grad);
        }
        context.push_back(response[t]);
    }
}

std::vector<double> logprob_gradient(const PolicyParams& params, std::span<const Token> context, Token target,
                                     std::optional<std::span<const RouterDecision>> router_override) {
    std::vector<double> grad(params.values.size(), 0.0);
    std::span<const Token> prompt = context;
    const std::array<Token, 1> response{target};
    const std::array<double, 1> weight{1.0};
    accumulate_logprob_gradient(params, prompt, response, weight, router_override, grad);
    return grad;
}

namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
    std::array<char, 8> b;
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b.data(), 8);
}

std::uint64_t get_u64(std::istream& is) {
    std::array<unsigned char, 8> b{};
    is.read(reinterpret_cast<char*>(b.data()), 8);
    if (!is) throw std::runtime_error("truncated .params file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_params(const PolicyParams& params, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    const auto& c = params.config;
    for (std::uint64_t v : {std::uint64_t{c.vocab_size}, std::uint64_t{c.context_window},
                            std::uint64_t{c.embed_dim}, std::uint64_t{c.num_experts}, std::uint64_t{c.top_k},
                            c.seed}) {
        put_u64(os, v);
    }
    for (double v : params.values) put_u64(os, std::bit_cast<std::uint64_t>(v));
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

PolicyParams load_params(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    PolicyParams p;
    p.config.vocab_size = get_u64(is);
    p.config.context_window = get_u64(is);
    p.config.embed_dim = get_u64(is);
    p.config.num_experts = get_u64(is);
    p.config.top_k = get_u64(is);
    p.config.seed = get_u64(is);
    p.config.validate();
    p.values.resize(p.layout().size);
    for (auto& v : p.values) v = std::bit_cast<double>(get_u64(is));
    if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes in .params file");
    return p;
}

}  // namespace rlab
