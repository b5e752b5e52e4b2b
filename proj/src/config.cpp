#include "clat/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "clat/error.hpp"

namespace clat {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string> split_char(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

struct Cursor {
  std::string file;
  int line = 0;
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(file + ":" + std::to_string(line) + ": " + msg);
  }
};

int parse_int(const std::string& v, const Cursor& at) {
  try {
    size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) at.fail("trailing characters in integer '" + v + "'");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    at.fail("expected an integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& v, const Cursor& at) {
  try {
    size_t pos = 0;
    const uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) at.fail("trailing characters in integer '" + v + "'");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    at.fail("expected an unsigned integer, got '" + v + "'");
  }
}

float parse_float(const std::string& v, const Cursor& at) {
  try {
    size_t pos = 0;
    const float out = std::stof(v, &pos);
    if (pos != v.size()) at.fail("trailing characters in number '" + v + "'");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    at.fail("expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const Cursor& at) {
  if (v == "true") return true;
  if (v == "false") return false;
  at.fail("expected true or false, got '" + v + "'");
}

LayerConfig parse_layer(const std::string& value, const Cursor& at) {
  const std::vector<std::string> toks = split_ws(value);
  if (toks.empty()) at.fail("empty layer specification");
  LayerConfig layer;
  if (toks[0] == "conv") {
    layer.kind = LayerKind::conv;
  } else if (toks[0] == "dense") {
    layer.kind = LayerKind::dense;
  } else {
    at.fail("unknown layer kind '" + toks[0] + "' (expected conv or dense)");
  }
  for (size_t i = 1; i < toks.size(); ++i) {
    const std::string& tok = toks[i];
    const size_t eq = tok.find('=');
    const std::string key = tok.substr(0, eq);
    const std::string val = eq == std::string::npos ? "" : tok.substr(eq + 1);
    if (key == "relu" && eq == std::string::npos) {
      layer.post.push_back({PostOp::relu, 0});
    } else if (key == "flatten" && eq == std::string::npos) {
      layer.post.push_back({PostOp::flatten, 0});
    } else if (key == "maxpool") {
      layer.post.push_back({PostOp::maxpool, parse_int(val, at)});
    } else if (key == "avgpool") {
      layer.post.push_back({PostOp::avgpool, parse_int(val, at)});
    } else if (key == "filters" && layer.kind == LayerKind::conv) {
      layer.units = parse_int(val, at);
    } else if (key == "units" && layer.kind == LayerKind::dense) {
      layer.units = parse_int(val, at);
    } else if (key == "kernel" && layer.kind == LayerKind::conv) {
      layer.kernel = parse_int(val, at);
    } else if (key == "stride" && layer.kind == LayerKind::conv) {
      layer.stride = parse_int(val, at);
    } else if (key == "pad" && layer.kind == LayerKind::conv) {
      layer.pad = parse_int(val, at);
    } else {
      at.fail("unknown layer token '" + tok + "'");
    }
  }
  if (layer.units < 1) at.fail("layer needs filters=/units= >= 1");
  return layer;
}

Shape parse_input_shape(const std::string& v, const Cursor& at) {
  const std::vector<std::string> parts = split_char(v, 'x');
  if (parts.size() != 3) at.fail("input must be CxHxW, got '" + v + "'");
  return Shape{parse_int(parts[0], at), parse_int(parts[1], at), parse_int(parts[2], at)};
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& name) {
  RunConfig cfg;
  bool saw_input = false, saw_classes = false;
  std::string section;
  Cursor at{name, 0};
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++at.line;
    std::string line = raw;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') at.fail("unterminated section header");
      section = line.substr(1, line.size() - 2);
      if (section != "model" && section != "data" && section != "train" && section != "attack" &&
          section != "output") {
        at.fail("unknown section [" + section + "]");
      }
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) at.fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) at.fail("key '" + key + "' outside any [section]");

    if (section == "model") {
      if (key == "input") {
        cfg.model.input = parse_input_shape(value, at);
        saw_input = true;
      } else if (key == "classes") {
        cfg.model.classes = parse_int(value, at);
        saw_classes = true;
      } else if (key == "layer") {
        cfg.model.layers.push_back(parse_layer(value, at));
      } else {
        at.fail("unknown key '" + key + "' in [model]");
      }
    } else if (section == "data") {
      if (key == "source") {
        if (value != "synth" && value != "idx" && value != "cifar") {
          at.fail("source must be synth, idx or cifar");
        }
        cfg.data.source = value;
      } else if (key == "train_samples") {
        cfg.data.train_samples = parse_int(value, at);
      } else if (key == "test_samples") {
        cfg.data.test_samples = parse_int(value, at);
      } else if (key == "image_size") {
        cfg.data.image_size = parse_int(value, at);
      } else if (key == "noise") {
        cfg.data.noise = parse_float(value, at);
      } else if (key == "data_seed") {
        cfg.data.data_seed = parse_u64(value, at);
      } else if (key == "train_images") {
        cfg.data.train_images = value;
      } else if (key == "train_labels") {
        cfg.data.train_labels = value;
      } else if (key == "test_images") {
        cfg.data.test_images = value;
      } else if (key == "test_labels") {
        cfg.data.test_labels = value;
      } else if (key == "train_files") {
        cfg.data.train_files = split_char(value, ',');
      } else if (key == "test_files") {
        cfg.data.test_files = split_char(value, ',');
      } else {
        at.fail("unknown key '" + key + "' in [data]");
      }
    } else if (section == "train") {
      if (key == "epochs") {
        cfg.train.total_epochs = parse_int(value, at);
      } else if (key == "pretrain_epochs") {
        cfg.train.pretrain_epochs = parse_int(value, at);
      } else if (key == "reselect_period") {
        cfg.train.reselect_period = parse_int(value, at);
      } else if (key == "k") {
        cfg.train.k = parse_int(value, at);
      } else if (key == "lambda") {
        cfg.train.lambda = parse_float(value, at);
      } else if (key == "lr") {
        cfg.train.lr0 = parse_float(value, at);
      } else if (key == "momentum") {
        cfg.train.momentum = parse_float(value, at);
      } else if (key == "batch_size") {
        cfg.train.batch_size = parse_int(value, at);
      } else if (key == "seed") {
        cfg.train.seed = parse_u64(value, at);
      } else if (key == "criticality_batch") {
        cfg.train.criticality_batch = parse_int(value, at);
      } else if (key == "eval_samples") {
        cfg.train.eval_samples = parse_int(value, at);
      } else if (key == "fast_inner") {
        cfg.train.fast_inner = parse_bool(value, at);
      } else if (key == "ce_on_adv") {
        cfg.train.ce_on_adv = parse_bool(value, at);
      } else if (key == "restart_cosine") {
        cfg.train.restart_cosine = parse_bool(value, at);
      } else if (key == "dynamic") {
        cfg.train.dynamic_selection = parse_bool(value, at);
      } else {
        at.fail("unknown key '" + key + "' in [train]");
      }
    } else if (section == "attack") {
      if (key == "epsilon") {
        cfg.train.attack.epsilon = parse_float(value, at);
      } else if (key == "alpha") {
        cfg.train.attack.alpha = parse_float(value, at);
      } else if (key == "steps") {
        cfg.train.attack.steps = parse_int(value, at);
      } else if (key == "norm") {
        if (value == "linf") {
          cfg.train.attack.norm = AttackNorm::linf;
        } else if (value == "l2") {
          cfg.train.attack.norm = AttackNorm::l2;
        } else {
          at.fail("norm must be linf or l2");
        }
      } else if (key == "random_start") {
        cfg.train.attack.random_start = parse_bool(value, at);
      } else {
        at.fail("unknown key '" + key + "' in [attack]");
      }
    } else {  // output
      if (key == "dir") {
        cfg.output.dir = value;
      } else if (key == "metrics") {
        cfg.output.metrics = value;
      } else {
        at.fail("unknown key '" + key + "' in [output]");
      }
    }
  }

  at.line = 0;
  if (!saw_input) at.fail("[model] input is required");
  if (!saw_classes) at.fail("[model] classes is required");
  if (cfg.model.layers.empty()) at.fail("[model] needs at least one layer");
  if (cfg.data.source.empty()) at.fail("[data] source is required");
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "[model]\n";
  os << "input = " << cfg.model.input[0] << "x" << cfg.model.input[1] << "x" << cfg.model.input[2]
     << "\n";
  os << "classes = " << cfg.model.classes << "\n";
  for (const auto& l : cfg.model.layers) {
    os << "layer = ";
    if (l.kind == LayerKind::conv) {
      os << "conv filters=" << l.units << " kernel=" << l.kernel << " stride=" << l.stride
         << " pad=" << l.pad;
    } else {
      os << "dense units=" << l.units;
    }
    for (const auto& p : l.post) {
      switch (p.op) {
        case PostOp::relu: os << " relu"; break;
        case PostOp::maxpool: os << " maxpool=" << p.window; break;
        case PostOp::avgpool: os << " avgpool=" << p.window; break;
        case PostOp::flatten: os << " flatten"; break;
      }
    }
    os << "\n";
  }
  os << "\n[data]\n";
  os << "source = " << cfg.data.source << "\n";
  if (cfg.data.source == "synth") {
    os << "train_samples = " << cfg.data.train_samples << "\n";
    os << "test_samples = " << cfg.data.test_samples << "\n";
    os << "image_size = " << cfg.data.image_size << "\n";
    os << "noise = " << cfg.data.noise << "\n";
    os << "data_seed = " << cfg.data.data_seed << "\n";
  } else if (cfg.data.source == "idx") {
    os << "train_images = " << cfg.data.train_images << "\n";
    os << "train_labels = " << cfg.data.train_labels << "\n";
    os << "test_images = " << cfg.data.test_images << "\n";
    os << "test_labels = " << cfg.data.test_labels << "\n";
  } else {
    auto join = [](const std::vector<std::string>& v) {
      std::string out;
      for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += v[i];
      }
      return out;
    };
    os << "train_files = " << join(cfg.data.train_files) << "\n";
    os << "test_files = " << join(cfg.data.test_files) << "\n";
  }
  os << "\n[train]\n";
  os << "epochs = " << cfg.train.total_epochs << "\n";
  os << "pretrain_epochs = " << cfg.train.pretrain_epochs << "\n";
  os << "reselect_period = " << cfg.train.reselect_period << "\n";
  os << "k = " << cfg.train.k << "\n";
  os << "lambda = " << cfg.train.lambda << "\n";
  os << "lr = " << cfg.train.lr0 << "\n";
  os << "momentum = " << cfg.train.momentum << "\n";
  os << "batch_size = " << cfg.train.batch_size << "\n";
  os << "seed = " << cfg.train.seed << "\n";
  os << "criticality_batch = " << cfg.train.criticality_batch << "\n";
  os << "eval_samples = " << cfg.train.eval_samples << "\n";
  os << "fast_inner = " << (cfg.train.fast_inner ? "true" : "false") << "\n";
  os << "ce_on_adv = " << (cfg.train.ce_on_adv ? "true" : "false") << "\n";
  os << "restart_cosine = " << (cfg.train.restart_cosine ? "true" : "false") << "\n";
  os << "dynamic = " << (cfg.train.dynamic_selection ? "true" : "false") << "\n";
  os << "\n[attack]\n";
  os << "epsilon = " << cfg.train.attack.epsilon << "\n";
  os << "alpha = " << cfg.train.attack.alpha << "\n";
  os << "steps = " << cfg.train.attack.steps << "\n";
  os << "norm = " << (cfg.train.attack.norm == AttackNorm::linf ? "linf" : "l2") << "\n";
  os << "random_start = " << (cfg.train.attack.random_start ? "true" : "false") << "\n";
  os << "\n[output]\n";
  os << "dir = " << cfg.output.dir << "\n";
  os << "metrics = " << cfg.output.metrics << "\n";
  return os.str();
}

Network build_network(const ModelConfig& model, uint64_t init_seed) {
  Network net(model.input, model.classes);
  for (const auto& l : model.layers) {
    if (l.kind == LayerKind::conv) {
      net.add_conv(l.units, l.kernel, l.stride, l.pad, l.post);
    } else {
      net.add_dense(l.units, l.post);
    }
  }
  const LayerSpec& head = net.layer(net.layer_count());
  if (shape_numel(head.output_shape) != model.classes) {
    throw ConfigError("final layer produces " + std::to_string(shape_numel(head.output_shape)) +
                      " outputs but the model declares " + std::to_string(model.classes) +
                      " classes");
  }
  Rng rng(derive_seed(init_seed, "init", 0));
  net.init_params(rng);
  return net;
}

std::pair<Dataset, Dataset> load_datasets(const DataConfig& data, int classes) {
  if (data.source == "synth") {
    Dataset train = synth_dataset(classes, data.train_samples, data.image_size,
                                  derive_seed(data.data_seed, "train-split", 0), data.noise);
    Dataset test = synth_dataset(classes, data.test_samples, data.image_size,
                                 derive_seed(data.data_seed, "test-split", 0), data.noise);
    test.split = Split::test;
    return {std::move(train), std::move(test)};
  }
  if (data.source == "idx") {
    Dataset train = load_idx(data.train_images, data.train_labels);
    Dataset test = load_idx(data.test_images, data.test_labels);
    test.split = Split::test;
    return {std::move(train), std::move(test)};
  }
  if (data.source == "cifar") {
    Dataset train = load_cifar_binary(data.train_files);
    Dataset test = load_cifar_binary(data.test_files);
    test.split = Split::test;
    return {std::move(train), std::move(test)};
  }
  throw ConfigError("unknown data source '" + data.source + "'");
}

}  // namespace clat
