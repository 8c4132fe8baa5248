#include "automoe/analyze.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "automoe/errors.hpp"
#include "internal.hpp"

namespace automoe {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pct_or_na(const std::optional<double>& r) { return r ? fmt("%.1f%%", 100.0 * *r) : "N/A"; }

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

}  // namespace

bool has_moe_layer(const Gene& g) {
  auto multi = [](const std::vector<int>& v) { return std::any_of(v.begin(), v.end(), [](int e) { return e > 1; }); };
  return multi(g.enc_experts) || multi(g.dec_experts);
}

std::optional<double> encoder_expert_ratio(const Gene& g) {
  if (!has_moe_layer(g)) return std::nullopt;
  const double enc = total_encoder_experts(g);
  return enc / (enc + total_decoder_experts(g));
}

AnalysisReport analyze(std::vector<AnalyzedGene> genes) {
  if (genes.empty()) throw ConfigError("analyze needs at least one gene");
  AnalysisReport r;
  r.genes = std::move(genes);

  std::map<int, std::vector<double>> by_depth;
  double enc_sum = 0, all_sum = 0, ratio_sum = 0;
  std::size_t ratio_n = 0;
  std::vector<double> enc_layers, dec_layers;
  double share_sum = 0;
  std::size_t share_n = 0;
  for (const auto& a : r.genes) {
    by_depth[a.gene.num_dec_layers].push_back(a.cost.flops / 1e9);
    const auto ratio = encoder_expert_ratio(a.gene);
    r.per_gene_ratio.push_back(ratio);
    if (ratio) {
      r.has_moe = true;
      ratio_sum += *ratio;
      ++ratio_n;
      enc_sum += total_encoder_experts(a.gene);
      all_sum += total_encoder_experts(a.gene) + total_decoder_experts(a.gene);
      enc_layers.resize(std::max(enc_layers.size(), a.gene.enc_experts.size()), 0.0);
      dec_layers.resize(std::max(dec_layers.size(), a.gene.dec_experts.size()), 0.0);
      for (std::size_t l = 0; l < a.gene.enc_experts.size(); ++l) enc_layers[l] += a.gene.enc_experts[l];
      for (std::size_t l = 0; l < a.gene.dec_experts.size(); ++l) dec_layers[l] += a.gene.dec_experts[l];
    }
    if (a.latency_ms && a.encoder_ms && *a.latency_ms > 0) {
      share_sum += (*a.latency_ms - *a.encoder_ms) / *a.latency_ms;
      ++share_n;
    }
  }
  if (r.has_moe) {
    r.pooled_encoder_ratio = enc_sum / all_sum;
    r.mean_encoder_ratio = ratio_sum / static_cast<double>(ratio_n);
    auto to_pct = [](std::vector<double> v) {
      double s = 0;
      for (double x : v) s += x;
      for (double& x : v) x = 100.0 * x / s;
      return v;
    };
    r.enc_layer_pct = to_pct(enc_layers);
    r.dec_layer_pct = to_pct(dec_layers);
  }
  for (const auto& [depth, flops] : by_depth) {
    DecoderDepthRow row;
    row.decoder_layers = depth;
    row.genes = flops.size();
    row.min_gflops = *std::min_element(flops.begin(), flops.end());
    row.max_gflops = *std::max_element(flops.begin(), flops.end());
    for (double f : flops) row.mean_gflops += f;
    row.mean_gflops /= static_cast<double>(flops.size());
    r.depth_vs_flops.push_back(row);
  }
  if (share_n) r.decoder_latency_share = share_sum / static_cast<double>(share_n);
  return r;
}

AnalysisReport analyze_directory(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir);
  std::vector<fs::path> gene_files;
  std::vector<fs::path> logs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.size() > 10 && name.ends_with(".gene.json")) gene_files.push_back(e.path());
    if (name.ends_with(".jsonl")) logs.push_back(e.path());
  }
  if (gene_files.empty()) throw ConfigError("no *.gene.json files in " + dir);
  std::sort(gene_files.begin(), gene_files.end());
  std::sort(logs.begin(), logs.end());

  std::map<std::string, std::pair<double, double>> latency;  // gene hash -> (total, encoder)
  for (const auto& p : logs) {
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) continue;
      if (!j.contains("gene_hash") || !j.contains("truncated_mean_ms") || !j.contains("encoder_ms")) continue;
      latency[j["gene_hash"].get<std::string>()] = {j["truncated_mean_ms"].get<double>(), j["encoder_ms"].get<double>()};
    }
  }

  std::vector<AnalyzedGene> genes;
  for (const auto& p : gene_files) {
    AnalyzedGene a;
    const std::string file = p.filename().string();
    a.name = file.substr(0, file.size() - std::string(".gene.json").size());
    a.gene = read_gene_file(p.string());
    const fs::path cost = p.parent_path() / (a.name + ".cost.json");
    a.cost = fs::exists(cost) ? decode_cost_report(detail::read_text_file(cost)) : cost_report(a.gene);
    auto it = latency.find(hex_hash(gene_hash(a.gene)));
    if (it != latency.end()) {
      a.latency_ms = it->second.first;
      a.encoder_ms = it->second.second;
    }
    genes.push_back(std::move(a));
  }
  return analyze(std::move(genes));
}

std::string render_report(const AnalysisReport& r) {
  std::ostringstream o;
  o << "genes\n";
  o << "  " << pad("name", 20) << pad("enc experts", 16) << pad("dec experts", 12) << pad("GFLOPs", 9)
    << pad("enc ratio", 10) << "latency ms\n";
  for (std::size_t i = 0; i < r.genes.size(); ++i) {
    const auto& a = r.genes[i];
    o << "  " << pad(a.name, 20) << pad(hyphen_join(a.gene.enc_experts), 16) << pad(hyphen_join(a.gene.dec_experts), 12)
      << pad(fmt("%.3f", a.cost.flops / 1e9), 9) << pad(pct_or_na(r.per_gene_ratio[i]), 10)
      << (a.latency_ms ? fmt("%.3f", *a.latency_ms) : std::string("-")) << "\n";
  }

  o << "\ndecoder layers vs FLOPs\n";
  o << "  " << pad("dec layers", 12) << pad("genes", 7) << pad("mean GFLOPs", 13) << pad("min", 9) << "max\n";
  for (const auto& row : r.depth_vs_flops) {
    o << "  " << pad(std::to_string(row.decoder_layers), 12) << pad(std::to_string(row.genes), 7)
      << pad(fmt("%.3f", row.mean_gflops), 13) << pad(fmt("%.3f", row.min_gflops), 9) << fmt("%.3f", row.max_gflops)
      << "\n";
  }

  o << "\nencoder expert ratio\n";
  if (!r.has_moe) {
    o << "  pooled: N/A (no MoE layers)\n  mean of genes: N/A (no MoE layers)\n";
  } else {
    o << "  pooled: " << fmt("%.1f%%", 100.0 * r.pooled_encoder_ratio) << "\n";
    o << "  mean of genes: " << fmt("%.1f%%", 100.0 * r.mean_encoder_ratio) << "\n";
    o << "\nexperts per layer (% of side total)\n";
    auto row = [&](const char* side, const std::vector<double>& v) {
      o << "  " << side;
      for (std::size_t l = 0; l < v.size(); ++l) o << "  L" << l << " " << fmt("%.1f%%", v[l]);
      o << "\n";
    };
    row("encoder", r.enc_layer_pct);
    row("decoder", r.dec_layer_pct);
  }

  o << "\ndecoder latency share\n";
  o << "  " << (r.decoder_latency_share ? fmt("%.1f%%", 100.0 * *r.decoder_latency_share) : std::string("N/A (no latency logs)"))
    << "\n";
  return o.str();
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<BarSeries>& series, const std::string& y_label) {
  const double W = 640, H = 400, left = 70, right = 20, top = 40, bottom = 60;
  const double plot_w = W - left - right, plot_h = H - top - bottom;
  double ymax = 0;
  for (const auto& s : series) {
    for (double v : s.values) ymax = std::max(ymax, v);
  }
  if (ymax <= 0) ymax = 1;
  ymax *= 1.1;
  static const char* colors[] = {"#4472c4", "#ed7d31", "#70ad47", "#ffc000", "#5b9bd5", "#a5a5a5"};

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4, y = top + plot_h - plot_h * t / 4;
    o << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt("%.3g", v) << "</text>\n";
  }
  o << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 16 " << top + plot_h / 2
    << ")\" text-anchor=\"middle\">" << xml_escape(y_label) << "</text>\n";

  const double group_w = categories.empty() ? plot_w : plot_w / static_cast<double>(categories.size());
  const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(1, series.size()));
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double gx = left + group_w * static_cast<double>(c) + group_w * 0.1;
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double v = c < series[s].values.size() ? series[s].values[c] : 0.0;
      const double h = plot_h * v / ymax;
      o << "<rect x=\"" << gx + bar_w * static_cast<double>(s) << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar_w
        << "\" height=\"" << h << "\" fill=\"" << colors[s % 6] << "\"><title>" << xml_escape(series[s].label) << " "
        << xml_escape(categories[c]) << ": " << fmt("%.4g", v) << "</title></rect>\n";
    }
    o << "<text x=\"" << gx + group_w * 0.4 << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">"
      << xml_escape(categories[c]) << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double lx = left + 10 + 140 * static_cast<double>(s);
    o << "<rect x=\"" << lx << "\" y=\"" << H - 22 << "\" width=\"12\" height=\"12\" fill=\"" << colors[s % 6] << "\"/>\n";
    o << "<text x=\"" << lx + 16 << "\" y=\"" << H - 12 << "\">" << xml_escape(series[s].label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<std::string> write_report_svgs(const AnalysisReport& r, const std::string& out_dir) {
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& svg) {
    const fs::path p = fs::path(out_dir) / name;
    detail::write_text_file(p, svg);
    written.push_back(p.string());
  };

  std::vector<std::string> depths;
  BarSeries flops{"mean GFLOPs", {}};
  for (const auto& row : r.depth_vs_flops) {
    depths.push_back(std::to_string(row.decoder_layers));
    flops.values.push_back(row.mean_gflops);
  }
  emit("decoder_layers_vs_flops.svg", svg_bar_chart("Decoder layers vs FLOPs", depths, {flops}, "GFLOPs"));

  std::vector<std::string> layers;
  const std::size_t n = std::max(r.enc_layer_pct.size(), r.dec_layer_pct.size());
  for (std::size_t l = 0; l < n; ++l) layers.push_back("L" + std::to_string(l));
  auto padded = [n](std::vector<double> v) {
    v.resize(n, 0.0);
    return v;
  };
  const std::string title = r.has_moe ? "Experts per layer (encoder " + fmt("%.1f%%", 100.0 * r.pooled_encoder_ratio) + ")"
                                      : std::string("Experts per layer (no MoE layers)");
  emit("expert_placement.svg", svg_bar_chart(title, layers,
                                             {{"encoder", padded(r.enc_layer_pct)}, {"decoder", padded(r.dec_layer_pct)}},
                                             "% of side's experts"));

  if (r.decoder_latency_share) {
    std::vector<std::string> names;
    BarSeries enc{"encoder ms", {}}, dec{"decoder ms", {}};
    for (const auto& a : r.genes) {
      if (!a.latency_ms || !a.encoder_ms) continue;
      names.push_back(a.name);
      enc.values.push_back(*a.encoder_ms);
      dec.values.push_back(*a.latency_ms - *a.encoder_ms);
    }
    emit("latency_share.svg",
         svg_bar_chart("Latency split (decoder " + fmt("%.1f%%", 100.0 * *r.decoder_latency_share) + ")", names, {enc, dec}, "ms"));
  }
  return written;
}

}  // namespace automoe
