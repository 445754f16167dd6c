#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bestow/config.hpp"
#include "bestow/encoder.hpp"
#include "bestow/nn/layers.hpp"
#include "bestow/policy.hpp"
#include "bestow/vocab.hpp"

namespace bestow {

enum class QueryEncoderKind { causal_self_attention, rnn };

inline std::string to_string(QueryEncoderKind k) {
  return k == QueryEncoderKind::rnn ? "rnn" : "causal_self_attention";
}
inline QueryEncoderKind parse_query_encoder(const std::string& s) {
  if (s == "causal_self_attention") return QueryEncoderKind::causal_self_attention;
  if (s == "rnn") return QueryEncoderKind::rnn;
  throw std::invalid_argument("unknown query encoder '" + s + "' (expected causal_self_attention or rnn)");
}

struct BridgeConfig {
  std::size_t X = 2;  // (self-attention +) cross-attention layers
  QueryEncoderKind query_encoder = QueryEncoderKind::causal_self_attention;
  std::size_t rnn_layers = 2;  // only for the rnn query encoder
};

struct ModelConfig {
  Vocabulary vocab;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t llm_layers = 4;
  BridgeConfig bridge;
  EncoderConfig encoder;

  void validate() const {
    if (bridge.X < 1 || bridge.X > 8) throw std::invalid_argument("bridge depth X must be in [1, 8]");
    if (encoder.d_model != d_model) throw std::invalid_argument("encoder width must equal model width");
    if (vocab.content < 2) throw std::invalid_argument("vocabulary needs at least 2 content tokens");
    nn::TransformerBlockConfig{d_model, n_heads, d_ff}.validate();
    encoder.validate();
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("model.vocab", vocab.content);
    kv.set("model.d_model", d_model);
    kv.set("model.n_heads", n_heads);
    kv.set("model.d_ff", d_ff);
    kv.set("model.llm_layers", llm_layers);
    kv.set("bridge.X", bridge.X);
    kv.set("bridge.query_encoder", to_string(bridge.query_encoder));
    kv.set("bridge.rnn_layers", bridge.rnn_layers);
    kv.set("encoder.mode", to_string(encoder.mode));
    kv.set("encoder.P", encoder.P);
    kv.set("encoder.d_in", encoder.d_in);
    kv.set("encoder.n_layers", encoder.n_layers);
    kv.set("encoder.n_heads", encoder.n_heads);
    kv.set("encoder.d_ff", encoder.d_ff);
    kv.set("encoder.right_context", encoder.right_context_frames);
    std::string windows;
    for (const auto& w : encoder.causal_context_windows) {
      windows += (windows.empty() ? "" : ";") + std::to_string(w.left) + ":" + std::to_string(w.right);
    }
    kv.set("encoder.causal_windows", windows);
    kv.set("encoder.causal_window", encoder.causal_window);
    kv.set("encoder.bidi_window",
           encoder.bidi_window ? std::to_string(encoder.bidi_window->left) + ":" +
                                     std::to_string(encoder.bidi_window->right)
                               : std::string("none"));
    return kv;
  }

  static ModelConfig from_kv(const KeyValues& kv) {
    ModelConfig c;
    c.vocab.content = kv.get<std::size_t>("model.vocab", c.vocab.content);
    c.d_model = kv.get<std::size_t>("model.d_model", c.d_model);
    c.n_heads = kv.get<std::size_t>("model.n_heads", c.n_heads);
    c.d_ff = kv.get<std::size_t>("model.d_ff", c.d_ff);
    c.llm_layers = kv.get<std::size_t>("model.llm_layers", c.llm_layers);
    c.bridge.X = kv.get<std::size_t>("bridge.X", c.bridge.X);
    c.bridge.query_encoder =
        parse_query_encoder(kv.get_string("bridge.query_encoder", to_string(c.bridge.query_encoder)));
    c.bridge.rnn_layers = kv.get<std::size_t>("bridge.rnn_layers", c.bridge.rnn_layers);
    auto& e = c.encoder;
    e.mode = parse_encoder_mode(kv.get_string("encoder.mode", to_string(e.mode)));
    e.P = kv.get<std::size_t>("encoder.P", e.P);
    e.d_in = kv.get<std::size_t>("encoder.d_in", e.d_in);
    e.n_layers = kv.get<std::size_t>("encoder.n_layers", e.n_layers);
    e.n_heads = kv.get<std::size_t>("encoder.n_heads", c.n_heads);
    e.d_ff = kv.get<std::size_t>("encoder.d_ff", e.d_ff);
    e.d_model = c.d_model;
    e.right_context_frames = kv.get<std::size_t>("encoder.right_context", e.right_context_frames);
    if (kv.has("encoder.causal_windows")) {
      e.causal_context_windows.clear();
      std::stringstream ss(kv.get_string("encoder.causal_windows", ""));
      std::string item;
      while (std::getline(ss, item, ';')) e.causal_context_windows.push_back(parse_window(item));
    }
    e.causal_window = kv.get<std::size_t>("encoder.causal_window", e.causal_window);
    const auto bw = kv.get_string("encoder.bidi_window", "none");
    e.bidi_window = bw == "none" ? std::nullopt : std::optional<ContextWindow>(parse_window(bw));
    return c;
  }

  static ContextWindow parse_window(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw ConfigError("context window must be left:right, got '" + s + "'");
    return {std::stoul(s.substr(0, colon)), std::stoul(s.substr(colon + 1))};
  }
};

/// Speech encoder -> text-query cross-attention bridge -> causal LLM.
///
/// The bridge turns the token embeddings of the prompt into queries
/// (causal self-attention or an RNN), cross-attends to the encoder states
/// X times and adds the resulting speech features to the raw token
/// embeddings. The LLM backbone only ever sees that sum, so it holds no
/// speech-specific parameters.
class BestowModel {
 public:
  BestowModel() = default;
  BestowModel(BestowModel&&) = default;
  BestowModel& operator=(BestowModel&&) = default;
  // parameters are shared handles; a copy would silently alias them
  BestowModel(const BestowModel&) = delete;
  BestowModel& operator=(const BestowModel&) = delete;

  static BestowModel create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    BestowModel m;
    m.cfg_ = cfg;
    Rng rng = Rng(seed).substream("init");
    auto& ps = m.params_;
    const std::size_t d = cfg.d_model;
    m.embedding_ = ps.add("embed", rng.randn({cfg.vocab.size(), d}, 1.0));
    m.encoder_ = SpeechEncoder::create(ps, "encoder", cfg.encoder, rng);

    const nn::TransformerBlockConfig bc{d, cfg.n_heads, cfg.d_ff};
    if (cfg.bridge.query_encoder == QueryEncoderKind::rnn) {
      for (std::size_t l = 0; l < cfg.bridge.rnn_layers; ++l) {
        m.rnn_.push_back(nn::RnnLayer::create(ps, "bridge.rnn" + std::to_string(l), d, rng));
      }
    }
    for (std::size_t l = 0; l < cfg.bridge.X; ++l) {
      const std::string name = "bridge.layer" + std::to_string(l);
      BridgeLayer bl;
      if (cfg.bridge.query_encoder == QueryEncoderKind::causal_self_attention) {
        bl.ln_self = nn::LayerNorm::create(ps, name + ".ln_self", d);
        bl.self_attn = nn::MultiHeadAttention::create(ps, name + ".self", d, cfg.n_heads, rng);
      }
      bl.ln_cross = nn::LayerNorm::create(ps, name + ".ln_cross", d);
      bl.cross_attn = nn::MultiHeadAttention::create(ps, name + ".cross", d, cfg.n_heads, rng);
      if (l + 1 < cfg.bridge.X) {
        bl.ln_ff = nn::LayerNorm::create(ps, name + ".ln_ff", d);
        bl.ff = nn::FeedForward::create(ps, name + ".ff", d, cfg.d_ff, rng);
      }
      m.bridge_.push_back(std::move(bl));
    }
    for (std::size_t l = 0; l < cfg.llm_layers; ++l) {
      m.llm_.push_back(nn::DecoderBlock::create(ps, "llm.layer" + std::to_string(l), bc, false, rng));
    }
    m.llm_ln_ = nn::LayerNorm::create(ps, "llm.ln_out", d);
    m.head_ = nn::Linear::create(ps, "llm.head", d, cfg.vocab.size(), true, rng);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const SpeechEncoder& encoder() const { return encoder_; }
  /// Switches the encoder's runtime mode/window; weights are shared.
  void set_encoder_runtime(EncoderMode mode, std::size_t causal_window) {
    cfg_.encoder.mode = mode;
    cfg_.encoder.causal_window = causal_window;
    cfg_.encoder.validate();
    encoder_.config() = cfg_.encoder;
  }
  std::size_t vocab_size() const { return cfg_.vocab.size(); }

  /// Full-utterance encoding. The bidi_recompute mode trains and decodes
  /// offline exactly like bidi.
  EncoderOutput encode(const SpeechUtterance& u) const { return encoder_.encode(u); }

  Tensor embed(const std::vector<int>& tokens) const { return embedding(embedding_, tokens); }

  /// Query sequence for the bridge: embeddings plus positions, passed
  /// through the RNN stack when so configured (the self-attention variant
  /// applies its causal self-attention inside each bridge layer).
  Tensor build_queries(const std::vector<int>& tokens) const { return queries_from(embed(tokens)); }

  /// Bridge output: token embeddings plus the speech features extracted by
  /// the last cross-attention. Rows whose cross-attention is fully masked
  /// get exactly their token embedding.
  Tensor extract_features(const Tensor& queries, const Tensor& token_embeds, const EncoderOutput& enc,
                          const nn::AttentionMask& cross_mask) const {
    cross_mask.require_shape(queries.rows(), enc.steps(), "extract_features");
    if (enc.steps() == 0) return token_embeds;
    const std::size_t n = queries.rows();
    const auto causal = nn::AttentionMask::causal(n);
    Tensor h = queries;
    Tensor speech;
    for (std::size_t l = 0; l < bridge_.size(); ++l) {
      const auto& bl = bridge_[l];
      if (bl.self_attn) {
        Tensor hn = (*bl.ln_self)(h);
        h = add(h, (*bl.self_attn)(hn, hn, causal));
      }
      speech = bl.cross_attn(bl.ln_cross(h), enc.states, cross_mask);
      if (bl.ff) {
        h = add(h, speech);
        h = add(h, (*bl.ff)((*bl.ln_ff)(h)));
      }
    }
    return add(token_embeds, speech);
  }

  /// Causal LLM over input embeddings: positions, blocks, final norm, head.
  Tensor llm_logits(const Tensor& inputs) const {
    const std::size_t n = inputs.rows();
    Tensor x = add(inputs, nn::positional_encoding(n, cfg_.d_model));
    const auto causal = nn::AttentionMask::causal(n);
    for (const auto& b : llm_) x = b(x, causal);
    return head_(llm_ln_(x));
  }

  Tensor logits(const EncoderOutput& enc, const std::vector<int>& tokens, const nn::AttentionMask& cross_mask) const {
    Tensor e = embed(tokens);
    return llm_logits(extract_features(queries_from(e), e, enc, cross_mask));
  }

  /// The plain text LLM: embeddings straight into the backbone.
  Tensor text_only_logits(const std::vector<int>& tokens) const { return llm_logits(embed(tokens)); }

  /// Cross-attention mask for a teacher-forced prompt: offline when
  /// `schedule` is empty, wait-k otherwise.
  static nn::AttentionMask prompt_mask(const PromptLayout& prompt, std::size_t t_enc,
                                       const std::optional<WaitKConfig>& schedule) {
    const std::size_t rows = prompt.input_tokens().size();
    const std::size_t boundary = prompt.first_prediction_row();
    return schedule ? schedule_mask(rows, boundary, *schedule, t_enc) : offline_mask(rows, boundary, t_enc);
  }

  /// Logits for every position of the teacher-forced prompt.
  Tensor forward(const SpeechUtterance& u, const PromptLayout& prompt,
                 const std::optional<WaitKConfig>& schedule = std::nullopt) const {
    const EncoderOutput enc = encode(u);
    return forward_encoded(enc, prompt, schedule);
  }

  Tensor forward_encoded(const EncoderOutput& enc, const PromptLayout& prompt,
                         const std::optional<WaitKConfig>& schedule = std::nullopt) const {
    return logits(enc, prompt.input_tokens(), prompt_mask(prompt, enc.steps(), schedule));
  }

  /// Mean next-token loss over the target positions of one example.
  Tensor loss(const SpeechUtterance& u, const PromptLayout& prompt,
              const std::optional<WaitKConfig>& schedule = std::nullopt) const {
    return cross_entropy(forward(u, prompt, schedule), prompt.labels());
  }

  /// Parameter names that carry speech processing (encoder and bridge).
  std::vector<std::string> speech_parameter_names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : params_) {
      if (name.rfind("encoder.", 0) == 0 || name.rfind("bridge.", 0) == 0) out.push_back(name);
    }
    return out;
  }

  /// Zeroes every bridge cross-attention output projection.
  void zero_cross_attention_outputs() {
    for (auto& bl : bridge_) {
      auto w = bl.cross_attn.o.weight;
      for (double& v : w.data_mut()) v = 0.0;
    }
  }

 private:
  Tensor queries_from(const Tensor& token_embeds) const {
    Tensor q = add(token_embeds, nn::positional_encoding(token_embeds.rows(), cfg_.d_model));
    for (const auto& r : rnn_) q = r(q);
    return q;
  }

  struct BridgeLayer {
    std::optional<nn::LayerNorm> ln_self;
    std::optional<nn::MultiHeadAttention> self_attn;
    nn::LayerNorm ln_cross;
    nn::MultiHeadAttention cross_attn;
    std::optional<nn::LayerNorm> ln_ff;
    std::optional<nn::FeedForward> ff;
  };

  ModelConfig cfg_;
  ParameterStore params_;
  Tensor embedding_;
  SpeechEncoder encoder_;
  std::vector<nn::RnnLayer> rnn_;
  std::vector<BridgeLayer> bridge_;
  std::vector<nn::DecoderBlock> llm_;
  nn::LayerNorm llm_ln_;
  nn::Linear head_;
};

}  // namespace bestow
