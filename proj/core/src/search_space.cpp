#include "automoe/search_space.hpp"

#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "automoe/errors.hpp"
#include "internal.hpp"

namespace automoe {
namespace {

using ojson = nlohmann::ordered_json;

template <class T>
const T& pick(const std::vector<T>& choices, Rng& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, choices.size() - 1);
  return choices[dist(rng)];
}

int pick_experts(const SearchSpace& space, Rng& rng) {
  std::uniform_int_distribution<int> dist(1, space.max_experts_per_layer);
  return dist(rng);
}

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

void check_choice_list(std::vector<std::string>& out, const char* name, const std::vector<int>& v) {
  if (v.empty()) {
    out.push_back(std::string(name) + " is empty");
    return;
  }
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] <= v[i - 1]) {
      out.push_back(std::string(name) + " is not sorted ascending and duplicate-free");
      return;
    }
  }
}

void check_member(std::vector<std::string>& out, const std::string& what, int value,
                  const std::vector<int>& choices) {
  if (!contains(choices, value)) out.push_back(what + " = " + std::to_string(value) + " is not a legal choice");
}

std::string compact_object(const ojson& j) {
  std::string out = "{\n";
  std::size_t i = 0;
  for (auto it = j.begin(); it != j.end(); ++it, ++i) {
    out += "  " + ojson(it.key()).dump() + ": " + it.value().dump();
    out += (i + 1 < j.size()) ? ",\n" : "\n";
  }
  out += "}\n";
  return out;
}

ojson parse_json(std::string_view text) {
  try {
    return ojson::parse(text.begin(), text.end());
  } catch (const ojson::parse_error& e) {
    // nlohmann reports the 1-based count of consumed bytes; convert to 0-based.
    std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
    throw ParseError(std::string("parse error at offset ") + std::to_string(offset) + ": " + e.what(), offset);
  }
}

const ojson& require_field(const ojson& j, const char* key) {
  if (!j.is_object()) throw ParseError("expected a JSON object at top level", ParseError::npos);
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(std::string("missing field '") + key + "'", ParseError::npos);
  return *it;
}

int as_int(const ojson& v, const std::string& where) {
  if (!v.is_number_integer()) throw ParseError("field '" + where + "' must be an integer", ParseError::npos);
  return v.get<int>();
}

std::vector<int> split_hyphen(std::string_view s, const std::string& where) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t end = s.find('-', pos);
    if (end == std::string_view::npos) end = s.size();
    std::string_view tok = s.substr(pos, end - pos);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw ParseError("field '" + where + "': malformed hyphen list '" + std::string(s) + "'", ParseError::npos);
    }
    out.push_back(std::stoi(std::string(tok)));
    pos = end + 1;
    if (end == s.size()) break;
  }
  return out;
}

std::vector<int> as_int_list(const ojson& v, const std::string& where, bool allow_hyphen) {
  if (allow_hyphen && v.is_string()) return split_hyphen(v.get<std::string>(), where);
  if (!v.is_array()) throw ParseError("field '" + where + "' must be an array of integers", ParseError::npos);
  std::vector<int> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_int(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

// One layer of an expert-width list: explicit per-expert widths, or a single
// width shared by every expert of the layer.
struct LayerWidths {
  bool uniform = false;
  int width = 0;
  std::vector<int> widths;
};

// "[2048-3072]-3072-[1024]": bracket groups list per-expert widths, a bare
// width applies to every expert of that layer.
std::vector<LayerWidths> parse_bracket_dims(std::string_view s, const std::string& where) {
  std::vector<LayerWidths> layers;
  std::size_t i = 0;
  auto fail = [&]() {
    throw ParseError("field '" + where + "': malformed expert width list '" + std::string(s) + "'", ParseError::npos);
  };
  while (i < s.size()) {
    if (s[i] == '[') {
      std::size_t close = s.find(']', i);
      if (close == std::string_view::npos) fail();
      layers.push_back({false, 0, split_hyphen(s.substr(i + 1, close - i - 1), where)});
      i = close + 1;
    } else {
      std::size_t end = s.find('-', i);
      if (end == std::string_view::npos) end = s.size();
      auto w = split_hyphen(s.substr(i, end - i), where);
      layers.push_back({true, w.at(0), {}});
      i = end;
    }
    if (i < s.size()) {
      if (s[i] != '-') fail();
      ++i;
      if (i == s.size()) fail();
    }
  }
  return layers;
}

std::vector<std::vector<int>> as_expert_dims(const ojson& v, const std::string& where, const std::vector<int>& experts) {
  std::vector<LayerWidths> layers;
  if (v.is_string()) {
    layers = parse_bracket_dims(v.get<std::string>(), where);
  } else if (v.is_array()) {
    for (std::size_t l = 0; l < v.size(); ++l) {
      const std::string at = where + "[" + std::to_string(l) + "]";
      if (v[l].is_array()) {
        layers.push_back({false, 0, as_int_list(v[l], at, false)});
      } else {
        layers.push_back({true, as_int(v[l], at), {}});
      }
    }
  } else {
    throw ParseError("field '" + where + "' must be an array or a bracket string", ParseError::npos);
  }
  std::vector<std::vector<int>> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (!layers[l].uniform) {
      out.push_back(std::move(layers[l].widths));
      continue;
    }
    if (l >= experts.size()) {
      throw ParseError("field '" + where + "': uniform width for layer " + std::to_string(l) +
                           " has no matching expert count",
                       ParseError::npos);
    }
    out.emplace_back(static_cast<std::size_t>(std::max(experts[l], 0)), layers[l].width);
  }
  return out;
}

ojson gene_to_json(const Gene& g) {
  ojson j;
  j["embed_dim_enc"] = g.embed_dim_enc;
  j["embed_dim_dec"] = g.embed_dim_dec;
  j["num_enc_layers"] = g.num_enc_layers;
  j["num_dec_layers"] = g.num_dec_layers;
  j["qkv_dim"] = g.qkv_dim;
  j["enc_heads"] = g.enc_heads;
  j["dec_self_heads"] = g.dec_self_heads;
  j["dec_cross_heads"] = g.dec_cross_heads;
  j["dec_arbitrary_attn"] = g.dec_arbitrary_attn;
  j["enc_experts"] = g.enc_experts;
  j["dec_experts"] = g.dec_experts;
  j["enc_expert_ffn_dims"] = g.enc_expert_ffn_dims;
  j["dec_expert_ffn_dims"] = g.dec_expert_ffn_dims;
  return j;
}

ojson space_to_json(const SearchSpace& s) {
  ojson j;
  j["embed_dim_choices"] = s.embed_dim_choices;
  j["encoder_layer_choices"] = s.encoder_layer_choices;
  j["decoder_layer_choices"] = s.decoder_layer_choices;
  j["qkv_dim_choices"] = s.qkv_dim_choices;
  j["head_choices"] = s.head_choices;
  j["arbitrary_attn_choices"] = s.arbitrary_attn_choices;
  j["ffn_dim_choices"] = s.ffn_dim_choices;
  j["max_experts_per_layer"] = s.max_experts_per_layer;
  j["identity_experts_enabled"] = s.identity_experts_enabled;
  return j;
}

struct LayerChoice {
  int heads_a = 0;
  int heads_b = 0;
  int arbitrary = 0;
  int experts = 0;
  std::vector<int> widths;
};

std::vector<std::vector<int>> expert_configs(const SearchSpace& space) {
  std::vector<std::vector<int>> configs;
  for (int e = 1; e <= space.max_experts_per_layer; ++e) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(e), 0);
    const std::size_t n = space.ffn_dim_choices.size();
    while (true) {
      std::vector<int> widths;
      for (auto i : idx) widths.push_back(space.ffn_dim_choices[i]);
      configs.push_back(std::move(widths));
      std::size_t k = 0;
      while (k < idx.size() && ++idx[k] == n) idx[k++] = 0;
      if (k == idx.size()) break;
    }
  }
  return configs;
}

}  // namespace

SearchSpace table2_space(int max_experts) {
  SearchSpace s;
  s.embed_dim_choices = {512, 640};
  s.encoder_layer_choices = {6};
  s.decoder_layer_choices = {1, 2, 3, 4, 5, 6};
  s.qkv_dim_choices = {512};
  s.head_choices = {4, 8};
  s.arbitrary_attn_choices = {-1, 1, 2};
  s.ffn_dim_choices = {1024, 2048, 3072};
  s.max_experts_per_layer = max_experts;
  s.identity_experts_enabled = false;
  return s;
}

std::vector<std::string> validate_space(const SearchSpace& s) {
  std::vector<std::string> out;
  check_choice_list(out, "embed_dim_choices", s.embed_dim_choices);
  check_choice_list(out, "encoder_layer_choices", s.encoder_layer_choices);
  check_choice_list(out, "decoder_layer_choices", s.decoder_layer_choices);
  check_choice_list(out, "qkv_dim_choices", s.qkv_dim_choices);
  check_choice_list(out, "head_choices", s.head_choices);
  check_choice_list(out, "arbitrary_attn_choices", s.arbitrary_attn_choices);
  check_choice_list(out, "ffn_dim_choices", s.ffn_dim_choices);
  if (!out.empty()) return out;

  auto positive = [&](const char* name, const std::vector<int>& v) {
    if (v.front() < 1) out.push_back(std::string(name) + " must contain positive values");
  };
  positive("embed_dim_choices", s.embed_dim_choices);
  positive("encoder_layer_choices", s.encoder_layer_choices);
  positive("decoder_layer_choices", s.decoder_layer_choices);
  positive("qkv_dim_choices", s.qkv_dim_choices);
  positive("head_choices", s.head_choices);
  if (s.max_experts_per_layer < 1) out.push_back("max_experts_per_layer must be >= 1");
  if (s.ffn_dim_choices.front() < 0) out.push_back("ffn_dim_choices must be non-negative");
  if (s.ffn_dim_choices.front() == 0 && !s.identity_experts_enabled) {
    out.push_back("ffn_dim_choices contains 0 but identity experts are disabled");
  }
  for (int k : s.arbitrary_attn_choices) {
    if (k != -1 && k < 1) out.push_back("arbitrary_attn_choices may only contain -1 or k >= 1");
    if (k > s.encoder_layer_choices.front()) {
      out.push_back("arbitrary_attn_choices value " + std::to_string(k) + " exceeds the smallest encoder depth");
    }
  }
  for (int d : s.embed_dim_choices) {
    for (int h : s.head_choices) {
      if (h > 0 && d % h != 0) {
        out.push_back("embed dim " + std::to_string(d) + " is not divisible by head count " + std::to_string(h));
      }
    }
  }
  for (int q : s.qkv_dim_choices) {
    for (int h : s.head_choices) {
      if (h > 0 && q % h != 0) {
        out.push_back("qkv dim " + std::to_string(q) + " is not divisible by head count " + std::to_string(h));
      }
    }
  }
  return out;
}

void require_valid_space(const SearchSpace& space) {
  auto v = validate_space(space);
  if (v.empty()) return;
  std::string msg = "invalid search space:";
  for (auto& s : v) msg += "\n  " + s;
  throw ConfigError(msg);
}

Gene sample_gene(const SearchSpace& space, Rng& rng) {
  Gene g;
  g.embed_dim_enc = pick(space.embed_dim_choices, rng);
  g.embed_dim_dec = pick(space.embed_dim_choices, rng);
  g.num_enc_layers = pick(space.encoder_layer_choices, rng);
  g.num_dec_layers = pick(space.decoder_layer_choices, rng);
  g.qkv_dim = pick(space.qkv_dim_choices, rng);
  for (int l = 0; l < g.num_enc_layers; ++l) {
    g.enc_heads.push_back(pick(space.head_choices, rng));
    int e = pick_experts(space, rng);
    g.enc_experts.push_back(e);
    std::vector<int> widths;
    for (int j = 0; j < e; ++j) widths.push_back(pick(space.ffn_dim_choices, rng));
    g.enc_expert_ffn_dims.push_back(std::move(widths));
  }
  for (int l = 0; l < g.num_dec_layers; ++l) {
    g.dec_self_heads.push_back(pick(space.head_choices, rng));
    g.dec_cross_heads.push_back(pick(space.head_choices, rng));
    g.dec_arbitrary_attn.push_back(pick(space.arbitrary_attn_choices, rng));
    int e = pick_experts(space, rng);
    g.dec_experts.push_back(e);
    std::vector<int> widths;
    for (int j = 0; j < e; ++j) widths.push_back(pick(space.ffn_dim_choices, rng));
    g.dec_expert_ffn_dims.push_back(std::move(widths));
  }
  return g;
}

std::vector<std::string> validate_gene(const SearchSpace& space, const Gene& g) {
  std::vector<std::string> out;
  check_member(out, "embed_dim_enc", g.embed_dim_enc, space.embed_dim_choices);
  check_member(out, "embed_dim_dec", g.embed_dim_dec, space.embed_dim_choices);
  check_member(out, "num_enc_layers", g.num_enc_layers, space.encoder_layer_choices);
  check_member(out, "num_dec_layers", g.num_dec_layers, space.decoder_layer_choices);
  check_member(out, "qkv_dim", g.qkv_dim, space.qkv_dim_choices);

  auto check_len = [&](const char* name, std::size_t len, int expected) {
    if (expected < 0 || len != static_cast<std::size_t>(expected)) {
      out.push_back(std::string(name) + " has " + std::to_string(len) + " entries, expected " +
                    std::to_string(expected));
      return false;
    }
    return true;
  };
  auto check_heads = [&](const std::string& what, int h) {
    check_member(out, what, h, space.head_choices);
    if (h > 0 && g.qkv_dim > 0 && g.qkv_dim % h != 0) {
      out.push_back(what + " = " + std::to_string(h) + " does not divide qkv_dim " + std::to_string(g.qkv_dim));
    }
  };
  auto check_experts = [&](const char* side, const std::vector<int>& experts,
                           const std::vector<std::vector<int>>& dims, int layers) {
    const std::string e_name = std::string(side) + "_experts";
    const std::string d_name = std::string(side) + "_expert_ffn_dims";
    bool ok_e = check_len(e_name.c_str(), experts.size(), layers);
    bool ok_d = check_len(d_name.c_str(), dims.size(), layers);
    if (!ok_e) return;
    for (std::size_t l = 0; l < experts.size(); ++l) {
      const int e = experts[l];
      if (e < 1 || e > space.max_experts_per_layer) {
        out.push_back(e_name + "[" + std::to_string(l) + "] = " + std::to_string(e) + " outside [1, " +
                      std::to_string(space.max_experts_per_layer) + "] at layer " + std::to_string(l));
      }
      if (!ok_d || l >= dims.size()) continue;
      if (dims[l].size() != static_cast<std::size_t>(std::max(e, 0))) {
        out.push_back(d_name + "[" + std::to_string(l) + "] lists " + std::to_string(dims[l].size()) +
                      " widths but layer " + std::to_string(l) + " has " + std::to_string(e) + " experts");
        continue;
      }
      for (std::size_t j = 0; j < dims[l].size(); ++j) {
        check_member(out, d_name + "[" + std::to_string(l) + "][" + std::to_string(j) + "]", dims[l][j],
                     space.ffn_dim_choices);
      }
    }
  };

  if (check_len("enc_heads", g.enc_heads.size(), g.num_enc_layers)) {
    for (std::size_t l = 0; l < g.enc_heads.size(); ++l) check_heads("enc_heads[" + std::to_string(l) + "]", g.enc_heads[l]);
  }
  if (check_len("dec_self_heads", g.dec_self_heads.size(), g.num_dec_layers)) {
    for (std::size_t l = 0; l < g.dec_self_heads.size(); ++l) {
      check_heads("dec_self_heads[" + std::to_string(l) + "]", g.dec_self_heads[l]);
    }
  }
  if (check_len("dec_cross_heads", g.dec_cross_heads.size(), g.num_dec_layers)) {
    for (std::size_t l = 0; l < g.dec_cross_heads.size(); ++l) {
      check_heads("dec_cross_heads[" + std::to_string(l) + "]", g.dec_cross_heads[l]);
    }
  }
  if (check_len("dec_arbitrary_attn", g.dec_arbitrary_attn.size(), g.num_dec_layers)) {
    for (std::size_t l = 0; l < g.dec_arbitrary_attn.size(); ++l) {
      const int k = g.dec_arbitrary_attn[l];
      check_member(out, "dec_arbitrary_attn[" + std::to_string(l) + "]", k, space.arbitrary_attn_choices);
      if (k > g.num_enc_layers) {
        out.push_back("dec_arbitrary_attn[" + std::to_string(l) + "] = " + std::to_string(k) +
                      " exceeds the encoder depth");
      }
    }
  }
  check_experts("enc", g.enc_experts, g.enc_expert_ffn_dims, g.num_enc_layers);
  check_experts("dec", g.dec_experts, g.dec_expert_ffn_dims, g.num_dec_layers);
  return out;
}

Gene max_gene(const SearchSpace& space) {
  Gene g;
  const int d = space.embed_dim_choices.back();
  const int h = space.head_choices.back();
  const int w = space.ffn_dim_choices.back();
  const int m = space.max_experts_per_layer;
  g.embed_dim_enc = d;
  g.embed_dim_dec = d;
  g.num_enc_layers = space.encoder_layer_choices.back();
  g.num_dec_layers = space.decoder_layer_choices.back();
  g.qkv_dim = space.qkv_dim_choices.back();
  const auto ne = static_cast<std::size_t>(g.num_enc_layers);
  const auto nd = static_cast<std::size_t>(g.num_dec_layers);
  g.enc_heads.assign(ne, h);
  g.enc_experts.assign(ne, m);
  g.enc_expert_ffn_dims.assign(ne, std::vector<int>(static_cast<std::size_t>(m), w));
  g.dec_self_heads.assign(nd, h);
  g.dec_cross_heads.assign(nd, h);
  g.dec_arbitrary_attn.assign(nd, space.arbitrary_attn_choices.back());
  g.dec_experts.assign(nd, m);
  g.dec_expert_ffn_dims.assign(nd, std::vector<int>(static_cast<std::size_t>(m), w));
  return g;
}

void for_each_gene(const SearchSpace& space, const std::function<void(const Gene&)>& visit) {
  const auto experts = expert_configs(space);
  std::vector<LayerChoice> enc_options;
  for (int h : space.head_choices) {
    for (const auto& cfg : experts) enc_options.push_back({h, 0, 0, static_cast<int>(cfg.size()), cfg});
  }
  std::vector<LayerChoice> dec_options;
  for (int hs : space.head_choices) {
    for (int hc : space.head_choices) {
      for (int k : space.arbitrary_attn_choices) {
        for (const auto& cfg : experts) dec_options.push_back({hs, hc, k, static_cast<int>(cfg.size()), cfg});
      }
    }
  }

  Gene g;
  std::function<void(int)> dec_rec;
  std::function<void(int)> enc_rec = [&](int l) {
    if (l == g.num_enc_layers) {
      dec_rec(0);
      return;
    }
    for (const auto& o : enc_options) {
      g.enc_heads.push_back(o.heads_a);
      g.enc_experts.push_back(o.experts);
      g.enc_expert_ffn_dims.push_back(o.widths);
      enc_rec(l + 1);
      g.enc_heads.pop_back();
      g.enc_experts.pop_back();
      g.enc_expert_ffn_dims.pop_back();
    }
  };
  dec_rec = [&](int l) {
    if (l == g.num_dec_layers) {
      visit(g);
      return;
    }
    for (const auto& o : dec_options) {
      g.dec_self_heads.push_back(o.heads_a);
      g.dec_cross_heads.push_back(o.heads_b);
      g.dec_arbitrary_attn.push_back(o.arbitrary);
      g.dec_experts.push_back(o.experts);
      g.dec_expert_ffn_dims.push_back(o.widths);
      dec_rec(l + 1);
      g.dec_self_heads.pop_back();
      g.dec_cross_heads.pop_back();
      g.dec_arbitrary_attn.pop_back();
      g.dec_experts.pop_back();
      g.dec_expert_ffn_dims.pop_back();
    }
  };

  for (int de : space.embed_dim_choices) {
    for (int dd : space.embed_dim_choices) {
      for (int ne : space.encoder_layer_choices) {
        for (int nd : space.decoder_layer_choices) {
          for (int q : space.qkv_dim_choices) {
            g = Gene{};
            g.embed_dim_enc = de;
            g.embed_dim_dec = dd;
            g.num_enc_layers = ne;
            g.num_dec_layers = nd;
            g.qkv_dim = q;
            enc_rec(0);
          }
        }
      }
    }
  }
}

std::string encode_gene(const Gene& gene) { return compact_object(gene_to_json(gene)); }

Gene decode_gene(std::string_view text) {
  const ojson j = parse_json(text);
  Gene g;
  g.embed_dim_enc = as_int(require_field(j, "embed_dim_enc"), "embed_dim_enc");
  g.embed_dim_dec = as_int(require_field(j, "embed_dim_dec"), "embed_dim_dec");
  g.num_enc_layers = as_int(require_field(j, "num_enc_layers"), "num_enc_layers");
  g.num_dec_layers = as_int(require_field(j, "num_dec_layers"), "num_dec_layers");
  g.qkv_dim = as_int(require_field(j, "qkv_dim"), "qkv_dim");
  g.enc_heads = as_int_list(require_field(j, "enc_heads"), "enc_heads", false);
  g.dec_self_heads = as_int_list(require_field(j, "dec_self_heads"), "dec_self_heads", false);
  g.dec_cross_heads = as_int_list(require_field(j, "dec_cross_heads"), "dec_cross_heads", false);
  g.dec_arbitrary_attn = as_int_list(require_field(j, "dec_arbitrary_attn"), "dec_arbitrary_attn", false);
  g.enc_experts = as_int_list(require_field(j, "enc_experts"), "enc_experts", true);
  g.dec_experts = as_int_list(require_field(j, "dec_experts"), "dec_experts", true);
  g.enc_expert_ffn_dims = as_expert_dims(require_field(j, "enc_expert_ffn_dims"), "enc_expert_ffn_dims", g.enc_experts);
  g.dec_expert_ffn_dims = as_expert_dims(require_field(j, "dec_expert_ffn_dims"), "dec_expert_ffn_dims", g.dec_experts);
  return g;
}

std::string encode_space(const SearchSpace& space) { return compact_object(space_to_json(space)); }

SearchSpace decode_space(std::string_view text) {
  const ojson j = parse_json(text);
  SearchSpace s;
  s.embed_dim_choices = as_int_list(require_field(j, "embed_dim_choices"), "embed_dim_choices", false);
  s.encoder_layer_choices = as_int_list(require_field(j, "encoder_layer_choices"), "encoder_layer_choices", false);
  s.decoder_layer_choices = as_int_list(require_field(j, "decoder_layer_choices"), "decoder_layer_choices", false);
  s.qkv_dim_choices = as_int_list(require_field(j, "qkv_dim_choices"), "qkv_dim_choices", false);
  s.head_choices = as_int_list(require_field(j, "head_choices"), "head_choices", false);
  s.arbitrary_attn_choices = as_int_list(require_field(j, "arbitrary_attn_choices"), "arbitrary_attn_choices", false);
  s.ffn_dim_choices = as_int_list(require_field(j, "ffn_dim_choices"), "ffn_dim_choices", false);
  s.max_experts_per_layer = as_int(require_field(j, "max_experts_per_layer"), "max_experts_per_layer");
  const ojson& id = require_field(j, "identity_experts_enabled");
  if (!id.is_boolean()) throw ParseError("field 'identity_experts_enabled' must be a boolean", ParseError::npos);
  s.identity_experts_enabled = id.get<bool>();
  return s;
}

std::uint64_t gene_hash(const Gene& gene) { return detail::fnv1a(gene_to_json(gene).dump()); }

std::uint64_t space_hash(const SearchSpace& space) { return detail::fnv1a(space_to_json(space).dump()); }

std::string hex_hash(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int total_encoder_experts(const Gene& gene) {
  return std::accumulate(gene.enc_experts.begin(), gene.enc_experts.end(), 0);
}

int total_decoder_experts(const Gene& gene) {
  return std::accumulate(gene.dec_experts.begin(), gene.dec_experts.end(), 0);
}

std::string hyphen_join(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += '-';
    out += std::to_string(values[i]);
  }
  return out;
}

Gene read_gene_file(const std::string& path) { return decode_gene(detail::read_text_file(path)); }

void write_gene_file(const std::string& path, const Gene& gene) { detail::write_text_file(path, encode_gene(gene)); }

SearchSpace read_space_file(const std::string& path) { return decode_space(detail::read_text_file(path)); }

void write_space_file(const std::string& path, const SearchSpace& space) {
  detail::write_text_file(path, encode_space(space));
}

}  // namespace automoe
