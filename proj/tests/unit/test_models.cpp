#include "doctest_torch.hpp"

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vfseg/error.hpp"
#include "vfseg/losses.hpp"
#include "vfseg/models/segmentation_model.hpp"

using namespace vfseg;
using torch::indexing::Slice;

namespace {

std::vector<int64_t> spatial(const torch::Tensor& t) { return {t.size(2), t.size(3), t.size(4)}; }

torch::Tensor random_input(std::vector<int64_t> shape, uint64_t seed) {
  torch::manual_seed(seed);
  return torch::rand(shape);
}

// Module::to(dtype) would also cast the integer index buffers, so only the
// floating point tensors are converted here.
void to_double(torch::nn::Module& m) {
  torch::NoGradGuard guard;
  for (auto& p : m.parameters()) p.set_data(p.to(torch::kFloat64));
  for (auto& b : m.buffers()) {
    if (b.is_floating_point()) b.set_data(b.to(torch::kFloat64));
  }
}

void zero_tensor(torch::Tensor t) {
  torch::NoGradGuard guard;
  t.zero_();
}

void copy_parameters(torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard guard;
  auto src = from.named_parameters();
  for (auto& p : to.named_parameters()) p.value().copy_(src[p.key()]);
}

}  // namespace

TEST_CASE("parameter count is stable and differs between architectures") {
  const auto pct = ModelConfig{};
  auto unet_cfg = pct;
  unet_cfg.arch = Architecture::UNet3d;
  const auto a = build_model(pct, 1)->parameter_count();
  const auto b = build_model(pct, 2)->parameter_count();
  const auto u = build_model(unet_cfg, 1)->parameter_count();
  MESSAGE("pctnet parameters: " << a << ", unet3d parameters: " << u);
  CHECK(a == b);
  CHECK(a != u);
}

TEST_CASE("same seed gives identical weights") {
  auto m1 = build_model(ModelConfig::reduced(), 5);
  auto m2 = build_model(ModelConfig::reduced(), 5);
  auto p2 = m2->named_parameters();
  for (const auto& p : m1->named_parameters()) CHECK(torch::equal(p.value(), p2[p.key()]));
}

TEST_CASE("every head has num_classes channels") {
  auto model = build_model(ModelConfig{}, 0);
  for (const auto& p : model->named_parameters()) {
    if (SegmentationModel::is_head_parameter(p.key())) CHECK(p.value().size(0) == 5);
  }
}

TEST_CASE("invalid model configs are rejected") {
  auto expect_invalid = [](const ModelConfig& c) {
    try {
      c.validate();
      FAIL("expected InvalidConfig");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidConfig);
    }
  };
  ModelConfig c;
  c.level_channels = {24, 48, 48, 256, 512};
  expect_invalid(c);
  c = {};
  c.shift_size = {1, 2, 2};
  expect_invalid(c);
  c = {};
  c.num_heads = {5, 8, 16};
  expect_invalid(c);
  c = {};
  c.dropout_rate = 1.0;
  expect_invalid(c);
  c = {};
  c.num_classes = 1;
  expect_invalid(c);
}

TEST_CASE("output and embedding shapes follow the level ladder") {
  torch::NoGradGuard guard;
  auto model = build_model(ModelConfig{}, 3);
  model->eval();
  const auto x = random_input({1, 1, 32, 64, 64}, 11);

  auto [l1, l2] = model->embed(x);
  CHECK((l1.sizes() == torch::IntArrayRef{1, 24, 32, 64, 64}));
  CHECK((l2.sizes() == torch::IntArrayRef{1, 48, 32, 32, 32}));

  const auto out = model->forward(x).probs;
  REQUIRE(out.size() == 4);
  for (size_t s = 0; s < 4; ++s) {
    const auto& stride = kLevelStrides[s];
    CHECK(out[s].size(1) == 5);
    CHECK((spatial(out[s]) == std::vector<int64_t>{32 / stride[0], 64 / stride[1], 64 / stride[2]}));
  }
  CHECK((spatial(out[1]) == std::vector<int64_t>{32, 32, 32}));
  CHECK((spatial(out[3]) == std::vector<int64_t>{8, 8, 8}));
}

TEST_CASE("eval forward is deterministic and outputs are distributions") {
  torch::NoGradGuard guard;
  auto model = build_model(ModelConfig::reduced(), 4);
  model->eval();
  const auto x = random_input({1, 1, 16, 32, 32}, 12);
  const auto a = model->forward(x).probs;
  const auto b = model->forward(x).probs;
  for (size_t s = 0; s < 4; ++s) CHECK(torch::equal(a[s], b[s]));

  const auto z = model->forward(torch::zeros({1, 1, 16, 32, 32})).probs;
  for (const auto& p : z) {
    CHECK(p.min().item<float>() >= 0.f);
    CHECK((p.sum(1) - 1).abs().max().item<float>() < 1e-5f);
  }
}

TEST_CASE("incompatible spatial shapes are rejected") {
  auto model = build_model(ModelConfig::reduced(), 0);
  for (auto shape : {std::vector<int64_t>{1, 1, 30, 32, 32}, std::vector<int64_t>{1, 1, 16, 40, 32},
                     std::vector<int64_t>{1, 2, 16, 32, 32}, std::vector<int64_t>{16, 32, 32}}) {
    try {
      model->forward(torch::zeros(shape));
      FAIL("expected ShapeIncompatible");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ShapeIncompatible);
    }
  }
}

TEST_CASE("unet3d and pctnet share the interface") {
  torch::NoGradGuard guard;
  auto pct = build_model(ModelConfig::reduced(Architecture::PctNet, 3), 0);
  auto unet = build_model(ModelConfig::reduced(Architecture::UNet3d, 3), 0);
  pct->eval();
  unet->eval();
  const auto x = random_input({2, 1, 16, 32, 32}, 13);
  const auto a = pct->forward(x).probs;
  const auto b = unet->forward(x).probs;
  REQUIRE(a.size() == b.size());
  for (size_t s = 0; s < a.size(); ++s) CHECK(a[s].sizes() == b[s].sizes());
}

TEST_CASE("dropout is active in train mode only") {
  torch::NoGradGuard guard;
  auto cfg = ModelConfig::reduced();
  cfg.dropout_rate = 0.3;
  auto model = build_model(cfg, 6);
  const auto x = random_input({1, 1, 16, 32, 32}, 14);
  model->train();
  const auto t1 = model->forward(x).probs[0];
  const auto t2 = model->forward(x).probs[0];
  CHECK_FALSE(torch::equal(t1, t2));
  model->eval();
  CHECK(torch::equal(model->forward(x).probs[0], model->forward(x).probs[0]));
}

TEST_CASE("eval batch of two equals two single runs") {
  torch::NoGradGuard guard;
  for (auto arch : {Architecture::PctNet, Architecture::UNet3d}) {
    auto model = build_model(ModelConfig::reduced(arch), 8);
    model->eval();
    const auto x = random_input({2, 1, 16, 32, 32}, 15);
    const auto both = model->forward(x).probs;
    for (int64_t n = 0; n < 2; ++n) {
      const auto one = model->forward(x.slice(0, n, n + 1)).probs;
      for (size_t s = 0; s < 4; ++s) {
        CHECK((both[s].slice(0, n, n + 1) - one[s]).abs().max().item<float>() < 1e-5f);
      }
    }
  }
}

TEST_CASE("pct block is the sum of its branches") {
  torch::NoGradGuard guard;
  PctBlockOptions o;
  o.channels = 16;
  o.heads = 4;
  PctBlock block(o);
  initialize_parameters(*block);
  block->eval();
  const auto x = random_input({1, 16, 8, 8, 8}, 16);

  CHECK(torch::equal(block->forward(x), block->conv_branch(x) + block->attention_branch(x)));

  SUBCASE("silenced attention outputs reduce the attention branch to identity") {
    for (auto* sub : {&block->plain_attention(), &block->shifted_attention()}) {
      zero_tensor((*sub)->attention()->proj()->weight);
      zero_tensor((*sub)->attention()->proj()->bias);
      zero_tensor((*sub)->mlp_out()->weight);
      zero_tensor((*sub)->mlp_out()->bias);
    }
    CHECK(torch::equal(block->attention_branch(x), x));
    CHECK((block->forward(x) - (block->conv_branch(x) + x)).abs().max().item<float>() < 1e-6f);
  }

  SUBCASE("silenced final convolution reduces the block to the attention branch") {
    zero_tensor(block->conv()->last_conv()->weight);
    zero_tensor(block->conv()->last_conv()->bias);
    CHECK(block->conv_branch(x).abs().max().item<float>() == 0.f);
    CHECK(torch::equal(block->forward(x), block->attention_branch(x)));
  }
}

TEST_CASE("zero shift makes the shifted sub-block match the plain one bitwise") {
  torch::NoGradGuard guard;
  PctBlockOptions o;
  o.channels = 16;
  o.heads = 4;
  PctBlock block(o);
  initialize_parameters(*block);
  block->eval();
  auto& plain = block->plain_attention();
  auto& shifted = block->shifted_attention();
  copy_parameters(*plain, *shifted);
  const auto x = random_input({1, 8, 8, 8, 16}, 17);
  CHECK_FALSE(torch::equal(plain->forward(x), shifted->forward(x)));
  shifted->shift() = {0, 0, 0};
  CHECK(torch::equal(plain->forward(x), shifted->forward(x)));
}

TEST_CASE("attention rows sum to one") {
  torch::NoGradGuard guard;
  WindowAttention attn(16, 4, Triple{4, 4, 4});
  initialize_parameters(*attn);
  for (Triple shift : {Triple{0, 0, 0}, Triple{2, 2, 2}}) {
    for (auto shape : {std::vector<int64_t>{2, 8, 8, 8, 16}, std::vector<int64_t>{1, 6, 5, 8, 16}}) {
      const auto w = attn->attention_weights(random_input(shape, 18), shift);
      CHECK(w.min().item<float>() >= 0.f);
      CHECK((w.sum(-1) - 1).abs().max().item<float>() < 1e-5f);
    }
  }
}

TEST_CASE("a single window equals full self-attention") {
  torch::NoGradGuard guard;
  const int64_t dim = 8, heads = 2, hd = dim / heads;
  const Triple win{2, 4, 4};
  WindowAttention attn(dim, heads, win);
  initialize_parameters(*attn);
  auto table = attn->named_parameters()["relative_position_bias"];
  torch::manual_seed(19);
  table.copy_(torch::randn(table.sizes()));

  auto x = random_input({1, 2, 4, 4, dim}, 20).to(torch::kFloat64);
  to_double(*attn);
  const auto got = attn->forward(x, Triple{0, 0, 0});

  const auto tokens = x.reshape({32, dim});
  const auto qkv = torch::nn::functional::linear(tokens, attn->qkv()->weight, attn->qkv()->bias);
  const auto tab = table.to(torch::kFloat64);
  auto heads_out = torch::zeros({32, dim}, torch::kFloat64);
  auto coord = [&](int64_t i) { return Triple{i / 16, (i / 4) % 4, i % 4}; };
  for (int64_t h = 0; h < heads; ++h) {
    const auto q = qkv.slice(1, h * hd, (h + 1) * hd) / std::sqrt(static_cast<double>(hd));
    const auto k = qkv.slice(1, dim + h * hd, dim + (h + 1) * hd);
    const auto v = qkv.slice(1, 2 * dim + h * hd, 2 * dim + (h + 1) * hd);
    auto logits = torch::matmul(q, k.t());
    for (int64_t i = 0; i < 32; ++i) {
      for (int64_t j = 0; j < 32; ++j) {
        const auto a = coord(i), b = coord(j);
        const int64_t rz = a[0] - b[0] + win[0] - 1, ry = a[1] - b[1] + win[1] - 1, rx = a[2] - b[2] + win[2] - 1;
        const int64_t row = rz * (2 * win[1] - 1) * (2 * win[2] - 1) + ry * (2 * win[2] - 1) + rx;
        logits[i][j] += tab[row][h];
      }
    }
    heads_out.slice(1, h * hd, (h + 1) * hd).copy_(torch::matmul(torch::softmax(logits, 1), v));
  }
  const auto expected =
      torch::nn::functional::linear(heads_out, attn->proj()->weight, attn->proj()->bias).reshape(x.sizes());
  CHECK(oracle::relative_error(got, expected) < 1e-12);
}

TEST_CASE("perturbing one window leaves the other untouched") {
  torch::NoGradGuard guard;
  WindowAttention attn(8, 2, Triple{4, 4, 4});
  initialize_parameters(*attn);
  auto x = torch::zeros({1, 4, 4, 8, 8});
  torch::manual_seed(21);
  x.index_put_({Slice(), Slice(), Slice(), Slice(0, 4)}, torch::randn({8}));
  x.index_put_({Slice(), Slice(), Slice(), Slice(4, 8)}, torch::randn({8}));
  const auto base = attn->forward(x, Triple{0, 0, 0});

  auto y = x.clone();
  y.index({Slice(), Slice(), Slice(), Slice(0, 4)}) += 3.0;
  y.index_put_({0, 1, 2, 1}, torch::randn({8}));
  const auto moved = attn->forward(y, Triple{0, 0, 0});
  CHECK(torch::equal(base.index({Slice(), Slice(), Slice(), Slice(4, 8)}),
                     moved.index({Slice(), Slice(), Slice(), Slice(4, 8)})));
  CHECK_FALSE(torch::equal(base.index({Slice(), Slice(), Slice(), Slice(0, 4)}),
                           moved.index({Slice(), Slice(), Slice(), Slice(0, 4)})));
}

TEST_CASE("shifted windows only connect tokens that were contiguous before the roll") {
  torch::NoGradGuard guard;
  const int64_t E = 8, w = 4, s = 2;
  WindowAttention attn(8, 2, Triple{w, w, w});
  initialize_parameters(*attn);
  const auto weights = attn->attention_weights(random_input({1, E, E, E, 8}, 22), Triple{s, s, s});
  REQUIRE((weights.sizes() == torch::IntArrayRef{8, 2, 64, 64}));

  // Rolled-grid coordinate of token t in window wi (both lexicographic).
  auto rolled = [&](int64_t wi, int64_t t) {
    return Triple{(wi / 4) * w + t / 16, ((wi / 2) % 2) * w + (t / 4) % 4, (wi % 2) * w + t % 4};
  };
  int64_t allowed = 0, blocked = 0, wrong = 0;
  for (int64_t wi = 0; wi < 8; ++wi) {
    for (int64_t p = 0; p < 64; ++p) {
      for (int64_t q = 0; q < 64; ++q) {
        const auto rp = rolled(wi, p), rq = rolled(wi, q);
        bool reach = true;
        for (int a = 0; a < 3; ++a) reach = reach && (rp[a] + s) / E == (rq[a] + s) / E;
        for (int64_t h = 0; h < 2; ++h) {
          const float v = weights[wi][h][p][q].item<float>();
          if (reach ? !(v > 0.f) : v != 0.f) ++wrong;
        }
        (reach ? allowed : blocked) += 1;
      }
    }
  }
  CHECK(wrong == 0);
  CHECK(allowed > 0);
  CHECK(blocked > 0);
}

TEST_CASE("padded extents keep real tokens away from the padding") {
  torch::NoGradGuard guard;
  WindowAttention attn(8, 2, Triple{4, 4, 4});
  initialize_parameters(*attn);
  const auto x = random_input({1, 3, 4, 4, 8}, 23);
  const auto out = attn->forward(x, Triple{0, 0, 0});
  CHECK(out.sizes() == x.sizes());
  // Depth 3 is padded to 4; the last 16 tokens of the window are padding.
  const auto w = attn->attention_weights(x, Triple{0, 0, 0});
  CHECK((w.index({Slice(), Slice(), Slice(0, 48), Slice(48, 64)}).abs().max().item<float>() == 0.f));
}

TEST_CASE("end-to-end gradients match finite differences") {
  auto cfg = ModelConfig::reduced(Architecture::PctNet, 3);
  cfg.dropout_rate = 0.0;
  auto model = build_model(cfg, 9);
  to_double(*model);
  model->train();
  const auto x = random_input({1, 1, 16, 32, 32}, 24).to(torch::kFloat64);
  torch::manual_seed(25);
  const auto y = torch::randint(0, 3, {1, 16, 32, 32}, torch::kInt64);
  const LossConfig loss_cfg;

  auto loss_of = [&] { return deep_supervision_loss(model->forward(x).probs, y, loss_cfg); };
  model->zero_grad();
  loss_of().backward();

  auto params = model->parameters();
  std::mt19937_64 gen(26);
  std::vector<double> analytic, numeric;
  torch::NoGradGuard guard;
  for (int i = 0; i < 32; ++i) {
    auto& p = params[std::uniform_int_distribution<size_t>(0, params.size() - 1)(gen)];
    const auto idx = static_cast<int64_t>(std::uniform_int_distribution<int64_t>(0, p.numel() - 1)(gen));
    auto flat = p.view({-1});
    analytic.push_back(p.grad().view({-1})[idx].item<double>());
    const double orig = flat[idx].item<double>();
    const double h = 1e-7;  // small enough to rarely step across a PReLU kink
    flat[idx] = orig + h;
    const double up = loss_of().item<double>();
    flat[idx] = orig - h;
    const double down = loss_of().item<double>();
    flat[idx] = orig;
    numeric.push_back((up - down) / (2 * h));
  }
  const auto a = torch::tensor(analytic, torch::kFloat64);
  const auto n = torch::tensor(numeric, torch::kFloat64);
  const double rel = oracle::relative_error(a, n);
  MESSAGE("gradient relative error " << rel);
  CHECK(rel < 1e-3);
}
