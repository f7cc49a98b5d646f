#include "segfuse/gradsuite.hpp"

#include "segfuse/fusion.hpp"
#include "segfuse/nn.hpp"
#include "segfuse/rng.hpp"
#include "segfuse/transformer.hpp"

namespace segfuse {
namespace {

Tensor random(const Shape& shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(shape, std::move(v));
}

// Moves every parameter off its initial value so zero-initialized biases and
// unit norm scales do not hide gradient errors.
void jitter(ParamStore& params, SplitMix64& rng) {
  for (auto& [path, t] : params)
    for (double& v : t.mutable_data()) v += rng.uniform(-0.3, 0.3);
}

using Fn = std::function<Tensor(const Tensor&)>;

GradCase op(std::string name, std::function<std::pair<Fn, Tensor>(SplitMix64&)> make) {
  return {std::move(name), false, [make](std::uint64_t seed) {
            SplitMix64 rng(seed * 7919 + 17);
            auto [f, x] = make(rng);
            return grad_check_projected(f, x, 1e-5, seed);
          }};
}

// Composite cases build the module inside the runner and check with respect
// to the returned tensor (an input or one of the module's parameters).
struct Built {
  Fn f;
  Tensor x;
};

GradCase composite(std::string name, std::function<Built(std::uint64_t, SplitMix64&)> make) {
  return {std::move(name), true, [make](std::uint64_t seed) {
            SplitMix64 rng(seed * 104729 + 3);
            Built b = make(seed, rng);
            return grad_check_projected(b.f, b.x, 1e-5, seed);
          }};
}

struct Stores {
  ParamStore params;
  ParamStore buffers;
};

std::vector<GradCase> build_cases() {
  std::vector<GradCase> c;

  const auto binary = [&](const std::string& name, Tensor (*fn)(const Tensor&, const Tensor&)) {
    c.push_back(op(name + ".a", [fn](SplitMix64& rng) {
      const Tensor b = random({2, 1, 4}, rng);
      return std::pair<Fn, Tensor>{[fn, b](const Tensor& x) { return fn(x, b); }, random({2, 3, 4}, rng)};
    }));
    c.push_back(op(name + ".b", [fn](SplitMix64& rng) {
      const Tensor a = random({2, 3, 4}, rng);
      return std::pair<Fn, Tensor>{[fn, a](const Tensor& x) { return fn(a, x); }, random({2, 1, 4}, rng)};
    }));
  };
  binary("add", &add);
  binary("sub", &sub);
  binary("mul", &mul);

  c.push_back(op("scale", [](SplitMix64& rng) {
    return std::pair<Fn, Tensor>{[](const Tensor& x) { return scale(x, -1.7); }, random({3, 4}, rng)};
  }));
  c.push_back(op("add_scalar", [](SplitMix64& rng) {
    return std::pair<Fn, Tensor>{[](const Tensor& x) { return add_scalar(x, 0.3); }, random({3, 4}, rng)};
  }));
  c.push_back(op("matmul.a", [](SplitMix64& rng) {
    const Tensor b = random({2, 4, 3}, rng);
    return std::pair<Fn, Tensor>{[b](const Tensor& x) { return matmul(x, b); }, random({2, 5, 4}, rng)};
  }));
  c.push_back(op("matmul.b", [](SplitMix64& rng) {
    const Tensor a = random({2, 5, 4}, rng);
    return std::pair<Fn, Tensor>{[a](const Tensor& x) { return matmul(a, x); }, random({4, 3}, rng)};
  }));

  struct ConvSetup {
    Tensor x, w, b;
    Conv2dOptions o;
  };
  const auto conv_setup = [](SplitMix64& rng) {
    ConvSetup s;
    s.o.stride = 1 + rng.below(2);
    s.o.padding = rng.below(2);
    s.o.groups = rng.below(2) ? 2 : 1;
    s.x = random({2, 4, 6, 5}, rng);
    s.w = random({6, 4 / s.o.groups, 3, 3}, rng);
    s.b = random({6}, rng);
    return s;
  };
  c.push_back(op("conv2d.input", [conv_setup](SplitMix64& rng) {
    const ConvSetup s = conv_setup(rng);
    return std::pair<Fn, Tensor>{[s](const Tensor& x) { return conv2d(x, s.w, s.b, s.o); }, s.x};
  }));
  c.push_back(op("conv2d.weight", [conv_setup](SplitMix64& rng) {
    const ConvSetup s = conv_setup(rng);
    return std::pair<Fn, Tensor>{[s](const Tensor& w) { return conv2d(s.x, w, s.b, s.o); }, s.w};
  }));
  c.push_back(op("conv2d.bias", [conv_setup](SplitMix64& rng) {
    const ConvSetup s = conv_setup(rng);
    return std::pair<Fn, Tensor>{[s](const Tensor& b) { return conv2d(s.x, s.w, b, s.o); }, s.b};
  }));
  c.push_back(op("conv_transpose2d.input", [](SplitMix64& rng) {
    const Tensor w = random({3, 2, 2, 2}, rng), b = random({2}, rng);
    return std::pair<Fn, Tensor>{[w, b](const Tensor& x) { return conv_transpose2d(x, w, b, 2); },
                                 random({2, 3, 3, 4}, rng)};
  }));
  c.push_back(op("conv_transpose2d.weight", [](SplitMix64& rng) {
    const Tensor x = random({2, 3, 3, 4}, rng), b = random({2}, rng);
    return std::pair<Fn, Tensor>{[x, b](const Tensor& w) { return conv_transpose2d(x, w, b, 2); },
                                 random({3, 2, 3, 3}, rng)};
  }));
  c.push_back(op("conv_transpose2d.bias", [](SplitMix64& rng) {
    const Tensor x = random({2, 3, 3, 4}, rng), w = random({3, 2, 2, 2}, rng);
    return std::pair<Fn, Tensor>{[x, w](const Tensor& b) { return conv_transpose2d(x, w, b, 2); },
                                 random({2}, rng)};
  }));

  for (bool training : {true, false}) {
    const std::string mode = training ? "batch_norm_train" : "batch_norm_eval";
    const auto setup = [training](SplitMix64& rng, int which) {
      const Tensor x = random({3, 2, 3, 3}, rng), g = random({2}, rng, 0.5, 1.5), b = random({2}, rng);
      const Tensor rm = random({2}, rng), rv = random({2}, rng, 0.5, 2.0);
      Fn f = [=](const Tensor& v) {
        Tensor m = rm.clone(), s = rv.clone();
        return batch_norm(which == 0 ? v : x, which == 1 ? v : g, which == 2 ? v : b, m, s, training);
      };
      return std::pair<Fn, Tensor>{f, which == 0 ? x : which == 1 ? g : b};
    };
    c.push_back(op(mode + ".input", [setup](SplitMix64& rng) { return setup(rng, 0); }));
    c.push_back(op(mode + ".gamma", [setup](SplitMix64& rng) { return setup(rng, 1); }));
    c.push_back(op(mode + ".beta", [setup](SplitMix64& rng) { return setup(rng, 2); }));
  }

  const auto unary = [&](const std::string& name, Fn fn, Shape shape, double lo = -2.0, double hi = 2.0) {
    c.push_back(op(name, [fn, shape, lo, hi](SplitMix64& rng) {
      return std::pair<Fn, Tensor>{fn, random(shape, rng, lo, hi)};
    }));
  };
  unary("relu", [](const Tensor& x) { return relu(x); }, {3, 5});
  unary("sigmoid", [](const Tensor& x) { return sigmoid(x); }, {3, 5});
  unary("swish", [](const Tensor& x) { return swish(x); }, {3, 5});
  unary("softmax", [](const Tensor& x) { return softmax(x, 1); }, {2, 4, 3}, -3.0, 3.0);
  unary("log_softmax", [](const Tensor& x) { return log_softmax(x, 2); }, {2, 4, 3}, -3.0, 3.0);
  unary("upsample_nearest", [](const Tensor& x) { return upsample_nearest(x, 2); }, {1, 2, 3, 3});
  unary("global_avg_pool", [](const Tensor& x) { return global_avg_pool(x); }, {2, 3, 3, 2});
  unary("sum", [](const Tensor& x) { return sum(x, {1}, true); }, {2, 3, 4});
  unary("mean", [](const Tensor& x) { return mean(x, {0, 2}, false); }, {2, 3, 4});
  unary("reshape", [](const Tensor& x) { return reshape(x, {4, 6}); }, {2, 3, 4});
  unary("permute", [](const Tensor& x) { return permute(x, {2, 0, 1}); }, {2, 3, 4});
  c.push_back(op("layer_norm.input", [](SplitMix64& rng) {
    const Tensor g = random({5}, rng, 0.5, 1.5), b = random({5}, rng);
    return std::pair<Fn, Tensor>{[g, b](const Tensor& x) { return layer_norm(x, g, b); }, random({3, 5}, rng)};
  }));
  c.push_back(op("layer_norm.gamma", [](SplitMix64& rng) {
    const Tensor x = random({3, 5}, rng), b = random({5}, rng);
    return std::pair<Fn, Tensor>{[x, b](const Tensor& g) { return layer_norm(x, g, b); }, random({5}, rng)};
  }));
  c.push_back(op("layer_norm.beta", [](SplitMix64& rng) {
    const Tensor x = random({3, 5}, rng), g = random({5}, rng);
    return std::pair<Fn, Tensor>{[x, g](const Tensor& b) { return layer_norm(x, g, b); }, random({5}, rng)};
  }));
  c.push_back(op("concat", [](SplitMix64& rng) {
    const Tensor other = random({2, 1, 3}, rng);
    return std::pair<Fn, Tensor>{[other](const Tensor& x) { return concat({other, x, other}, 1); },
                                 random({2, 2, 3}, rng)};
  }));

  // Composite blocks.
  c.push_back(composite("double_conv.input", [](std::uint64_t seed, SplitMix64& rng) {
    Stores st;
    Stores* s = &st;
    auto m = std::make_shared<DoubleConv>(ParamBuilder(s->params, s->buffers, seed, "dc"), 3, 4);
    jitter(s->params, rng);
    return Built{[m](const Tensor& x) { return (*m)(x, true); }, random({2, 3, 5, 5}, rng)};
  }));
  c.push_back(composite("double_conv.weight", [](std::uint64_t seed, SplitMix64& rng) {
    Stores st;
    Stores* s = &st;
    auto m = std::make_shared<DoubleConv>(ParamBuilder(s->params, s->buffers, seed, "dc"), 3, 4);
    jitter(s->params, rng);
    const Tensor x = random({2, 3, 5, 5}, rng);
    return Built{[m, x](const Tensor&) { return (*m)(x, true); }, s->params.get("dc.conv1.conv.w")};
  }));
  for (std::size_t stride : {1, 2}) {
    const std::string name = stride == 1 ? "mbconv_residual" : "mbconv_strided";
    c.push_back(composite(name + ".input", [stride](std::uint64_t seed, SplitMix64& rng) {
      Stores st;
      Stores* s = &st;
      BlockSpec spec;
      spec.in_channels = 4;
      spec.out_channels = stride == 1 ? 4 : 6;
      spec.stride = stride;
      spec.expansion_ratio = 2.0;
      auto m = std::make_shared<MBConv>(ParamBuilder(s->params, s->buffers, seed, "mb"), spec);
      jitter(s->params, rng);
      return Built{[m](const Tensor& x) { return (*m)(x, true); }, random({2, 4, 6, 6}, rng)};
    }));
  }
  c.push_back(composite("mbconv_residual.weight", [](std::uint64_t seed, SplitMix64& rng) {
    Stores st;
    Stores* s = &st;
    BlockSpec spec;
    spec.in_channels = 4;
    spec.out_channels = 4;
    spec.expansion_ratio = 2.0;
    auto m = std::make_shared<MBConv>(ParamBuilder(s->params, s->buffers, seed, "mb"), spec);
    jitter(s->params, rng);
    const Tensor x = random({2, 4, 6, 6}, rng);
    return Built{[m, x](const Tensor&) { return (*m)(x, true); }, s->params.get("mb.dwconv.conv.w")};
  }));
  for (const std::string input : {"image", "dsm"}) {
    c.push_back(composite("input_fusion." + input, [input](std::uint64_t seed, SplitMix64& rng) {
      Stores st;
      Stores* s = &st;
      auto m = std::make_shared<InputFusion>(ParamBuilder(s->params, s->buffers, seed, "fusion"), NormConfig{});
      jitter(s->params, rng);
      const Tensor image = random({2, 3, 5, 5}, rng), dsm = random({2, 1, 5, 5}, rng);
      if (input == "image") return Built{[m, dsm](const Tensor& x) { return (*m)(x, dsm, true); }, image};
      return Built{[m, image](const Tensor& x) { return (*m)(image, x, true); }, dsm};
    }));
  }
  c.push_back(composite("tokenizer.input", [](std::uint64_t seed, SplitMix64& rng) {
    Stores st;
    Stores* s = &st;
    auto m = std::make_shared<Tokenizer>(ParamBuilder(s->params, s->buffers, seed, "tok"), 5, 3, 4);
    return Built{[m](const Tensor& x) { return (*m)(x); }, random({2, 5, 4, 3}, rng)};
  }));
  c.push_back(composite("tokenizer.weight", [](std::uint64_t seed, SplitMix64& rng) {
    Stores st;
    Stores* s = &st;
    auto m = std::make_shared<Tokenizer>(ParamBuilder(s->params, s->buffers, seed, "tok"), 5, 3, 4);
    const Tensor x = random({2, 5, 4, 3}, rng);
    return Built{[m, x](const Tensor&) { return (*m)(x); }, m->attention_proj.weight};
  }));
  c.push_back(composite("msa_layer.input", [](std::uint64_t seed, SplitMix64& rng) {
    Stores st;
    Stores* s = &st;
    auto m = std::make_shared<EncoderLayer>(ParamBuilder(s->params, s->buffers, seed, "enc"), 8,
                                            AttentionConfig{1, 2, 2});
    jitter(s->params, rng);
    return Built{[m](const Tensor& x) { return (*m)(x); }, random({2, 5, 8}, rng)};
  }));
  c.push_back(composite("msa_layer.weight", [](std::uint64_t seed, SplitMix64& rng) {
    Stores st;
    Stores* s = &st;
    auto m = std::make_shared<EncoderLayer>(ParamBuilder(s->params, s->buffers, seed, "enc"), 8,
                                            AttentionConfig{1, 2, 2});
    jitter(s->params, rng);
    const Tensor x = random({2, 5, 8}, rng);
    return Built{[m, x](const Tensor&) { return (*m)(x); }, s->params.get("enc.msa.wq.w")};
  }));
  for (const std::string input : {"query", "tokens"}) {
    c.push_back(composite("mca_layer." + input, [input](std::uint64_t seed, SplitMix64& rng) {
      Stores st;
      Stores* s = &st;
      auto m = std::make_shared<DecoderLayer>(ParamBuilder(s->params, s->buffers, seed, "dec"), 4, 6,
                                              AttentionConfig{1, 2, 2});
      jitter(s->params, rng);
      const Tensor q = random({2, 7, 4}, rng), t = random({2, 3, 6}, rng);
      if (input == "query") return Built{[m, t](const Tensor& x) { return (*m)(x, t); }, q};
      return Built{[m, q](const Tensor& x) { return (*m)(q, x); }, t};
    }));
  }
  c.push_back(composite("class_head.input", [](std::uint64_t seed, SplitMix64& rng) {
    Stores st;
    Stores* s = &st;
    HeadConfig cfg;
    cfg.num_tokens = 2;
    cfg.token_dim = 4;
    cfg.encoder = {1, 2, 2};
    auto m = std::make_shared<ClassHead>(ParamBuilder(s->params, s->buffers, seed, "head"), seed % kNumClasses,
                                         kNumClasses, cfg);
    jitter(s->params, rng);
    return Built{[m](const Tensor& x) { return (*m)(x); }, random({1, kNumClasses, 3, 3}, rng)};
  }));
  return c;
}

}  // namespace

const std::vector<GradCase>& gradient_cases() {
  static const std::vector<GradCase> cases = build_cases();
  return cases;
}

std::vector<GradCase> gradient_cases_for(const std::string& module) {
  std::vector<GradCase> out;
  for (const GradCase& c : gradient_cases()) {
    if (c.name == module || c.name.rfind(module + ".", 0) == 0) out.push_back(c);
  }
  return out;
}

}  // namespace segfuse
