#include "palign/synthetic.hpp"

#include <cmath>
#include <filesystem>

#include "palign/error.hpp"
#include "palign/rng.hpp"

namespace palign {

namespace {

void check_spec(const SynthSpec& spec) {
  if (spec.domains < 2) throw ContractError("synthetic generator needs at least two domains");
  if (spec.classes < 1 || spec.per_class < 1) throw ContractError("synthetic generator needs classes and samples");
  if (spec.shift < 0.0f || spec.noise < 0.0f) throw ContractError("shift and noise must be non-negative");
  if (spec.image_size < 2 || spec.channels < 1) throw ContractError("synthetic image dims too small");
}

// 3x3 box blur with clamped borders, blended in by mix.
Tensor<float> blur_mix(const Tensor<float>& img, int s, int ch, float mix) {
  if (mix <= 0.0f) return img;
  Tensor<float> out(img.shape());
  auto px = [&](int y, int x, int c) -> float {
    y = y < 0 ? 0 : (y >= s ? s - 1 : y);
    x = x < 0 ? 0 : (x >= s ? s - 1 : x);
    return img[(static_cast<int64_t>(y) * s + x) * ch + c];
  };
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int c = 0; c < ch; ++c) {
        float acc = 0.0f;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) acc += px(y + dy, x + dx, c);
        float base = px(y, x, c);
        out[(static_cast<int64_t>(y) * s + x) * ch + c] = (1.0f - mix) * base + mix * (acc / 9.0f);
      }
  return out;
}

Tensor<float> translate(const Tensor<float>& img, int s, int ch, int dy, int dx) {
  if (dy == 0 && dx == 0) return img;
  Tensor<float> out(img.shape());
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      int sy = ((y - dy) % s + s) % s;
      int sx = ((x - dx) % s + s) % s;
      for (int c = 0; c < ch; ++c)
        out[(static_cast<int64_t>(y) * s + x) * ch + c] = img[(static_cast<int64_t>(sy) * s + sx) * ch + c];
    }
  return out;
}

}  // namespace

DomainStyle synth_domain_style(const SynthSpec& spec, int domain) {
  check_spec(spec);
  if (domain < 0 || domain >= spec.domains)
    throw ContractError("domain " + std::to_string(domain) + " outside [0," + std::to_string(spec.domains) + ")");
  Rng rng(derive_seed(spec.seed, {0xd07au, static_cast<uint64_t>(domain)}));
  DomainStyle st;
  st.gain.resize(static_cast<size_t>(spec.channels));
  st.bias.resize(static_cast<size_t>(spec.channels));
  for (int c = 0; c < spec.channels; ++c) {
    st.gain[static_cast<size_t>(c)] = 1.0f + spec.shift * static_cast<float>((rng.uniform() - 0.5) * 0.22);
    st.bias[static_cast<size_t>(c)] = spec.shift * static_cast<float>((rng.uniform() - 0.5) * 0.14);
  }
  st.blur = spec.shift * static_cast<float>(rng.uniform() * 0.25);
  return st;
}

Tensor<float> synth_class_prototype(const SynthSpec& spec, int cls) {
  check_spec(spec);
  if (cls < 0 || cls >= spec.classes)
    throw ContractError("class " + std::to_string(cls) + " outside [0," + std::to_string(spec.classes) + ")");
  Rng rng(derive_seed(spec.seed, {0x9047u, static_cast<uint64_t>(cls)}));
  int s = spec.image_size, ch = spec.channels;

  // a handful of low-frequency plane waves per channel over a base color;
  // low frequencies survive the style blur, keeping classes identifiable
  struct Wave {
    float fy, fx, phase, amp;
  };
  std::vector<std::vector<Wave>> waves(static_cast<size_t>(ch));
  std::vector<float> base(static_cast<size_t>(ch));
  for (int c = 0; c < ch; ++c) {
    base[static_cast<size_t>(c)] = static_cast<float>(0.3 + 0.4 * rng.uniform());
    for (int w = 0; w < 3; ++w) {
      Wave wv;
      wv.fy = static_cast<float>(rng.uniform_int(0, 2));
      wv.fx = static_cast<float>(rng.uniform_int(0, 2));
      if (wv.fy == 0.0f && wv.fx == 0.0f) wv.fx = 1.0f;
      wv.phase = static_cast<float>(rng.uniform() * 6.283185307179586);
      wv.amp = static_cast<float>(0.15 + 0.2 * rng.uniform());
      waves[static_cast<size_t>(c)].push_back(wv);
    }
  }
  Tensor<float> img({s * s * ch});
  const float tau = 6.2831853f;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int c = 0; c < ch; ++c) {
        float v = base[static_cast<size_t>(c)];
        for (const auto& wv : waves[static_cast<size_t>(c)])
          v += wv.amp * std::sin(tau * (wv.fy * y + wv.fx * x) / static_cast<float>(s) + wv.phase);
        img[(static_cast<int64_t>(y) * s + x) * ch + c] = v;
      }
  return img;
}

std::vector<DomainDataset> generate_synthetic(const SynthSpec& spec) {
  check_spec(spec);
  int s = spec.image_size, ch = spec.channels;

  std::vector<Tensor<float>> protos;
  protos.reserve(static_cast<size_t>(spec.classes));
  for (int k = 0; k < spec.classes; ++k) protos.push_back(synth_class_prototype(spec, k));

  std::vector<DomainDataset> out;
  out.reserve(static_cast<size_t>(spec.domains));
  for (int d = 0; d < spec.domains; ++d) {
    DomainStyle st = synth_domain_style(spec, d);
    DomainDataset ds;
    ds.domain_id = d;
    ds.is_embedding = false;
    int id = 0;
    for (int k = 0; k < spec.classes; ++k)
      for (int i = 0; i < spec.per_class; ++i) {
        Rng rng(derive_seed(spec.seed, {0x5a3fu, static_cast<uint64_t>(d), static_cast<uint64_t>(k),
                                        static_cast<uint64_t>(i)}));
        int dy = rng.uniform_int(-1, 1);
        int dx = rng.uniform_int(-1, 1);
        float brightness = static_cast<float>(rng.normal() * 0.04);
        Tensor<float> img = translate(protos[static_cast<size_t>(k)], s, ch, dy, dx);
        for (int64_t j = 0; j < img.numel(); ++j) {
          int c = static_cast<int>(j % ch);
          img[j] = st.gain[static_cast<size_t>(c)] * img[j] + st.bias[static_cast<size_t>(c)] + brightness;
        }
        img = blur_mix(img, s, ch, st.blur);
        for (int64_t j = 0; j < img.numel(); ++j)
          img[j] += spec.noise * static_cast<float>(rng.normal());
        ds.samples.push_back(std::move(img));
        ds.sample_ids.push_back(id++);
        ds.labels.push_back(k);
      }
    out.push_back(std::move(ds));
  }
  return out;
}

std::string write_synthetic_dataset(const SynthSpec& spec, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto datasets = generate_synthetic(spec);

  auto rows_of = [](const DomainDataset& ds) {
    int n = ds.size();
    int w = n > 0 ? static_cast<int>(ds.samples[0].numel()) : 0;
    Tensor<float> rows({n, w});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j) rows.at(i, j) = ds.samples[static_cast<size_t>(i)][j];
    return rows;
  };

  DatasetManifest m;
  m.k = spec.classes;
  m.n = spec.domains;
  m.image_size = spec.image_size;
  m.channels = spec.channels;
  m.carrier = "image";
  for (int d = 0; d < spec.domains - 1; ++d) {
    std::string stem = "source" + std::to_string(d);
    write_embeddings((fs::path(dir) / (stem + ".emb1")).string(), rows_of(datasets[static_cast<size_t>(d)]));
    write_labels((fs::path(dir) / (stem + ".lbl1")).string(), datasets[static_cast<size_t>(d)].labels);
    m.domains.push_back({d, "source", stem + ".emb1", stem + ".lbl1"});
  }
  const auto& target = datasets.back();
  write_embeddings((fs::path(dir) / "target.emb1").string(), rows_of(target));
  write_labels((fs::path(dir) / "target_eval.lbl1").string(), target.labels);
  m.domains.push_back({spec.domains - 1, "target", "target.emb1", ""});
  m.target_eval_labels = "target_eval.lbl1";

  std::string manifest_path = (fs::path(dir) / "dataset.json").string();
  write_dataset_manifest(manifest_path, m);
  return manifest_path;
}

}  // namespace palign
