#include "scgan/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "scgan/checkpoint.hpp"
#include "scgan/image_io.hpp"

namespace scgan::train {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void TrainingConfig::validate() const {
    optim::AdamConfig{alpha, beta1, beta2}.validate();
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (critic_steps_per_gen < 1) throw std::invalid_argument("critic_steps_per_gen must be at least 1");
    if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
    if (total_gen_steps < 0) throw std::invalid_argument("total_gen_steps must be non-negative");
    if (checkpoint_interval < 1) throw std::invalid_argument("checkpoint_interval must be at least 1");
    weights.validate();
    network.validate();
    augment.validate();
}

loss::LossWeights TrainingConfig::effective_weights() const {
    loss::LossWeights w = weights;
    if (disable_image_cycle) w.lambda_I = 0.0;
    return w;
}

ordered_json TrainingConfig::to_json() const {
    ordered_json j;
    j["alpha"] = alpha;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["batch_size"] = batch_size;
    j["critic_steps_per_gen"] = critic_steps_per_gen;
    j["sigma2"] = sigma2;
    j["lambda_I"] = weights.lambda_I;
    j["lambda_N"] = weights.lambda_N;
    j["lambda_z"] = weights.lambda_z;
    j["lambda_p"] = weights.lambda_p;
    j["normalize_cycle"] = normalize_cycle;
    j["resolution"] = network.resolution;
    j["appearance_dim"] = network.appearance_dim;
    j["gen_channels"] = network.gen_channels;
    j["resnet_blocks"] = network.resnet_blocks;
    j["disc_channels"] = network.disc_channels;
    j["disc_max_channels"] = network.disc_max_channels;
    j["dz_hidden"] = network.dz_hidden;
    j["augment"] = {{"max_shift_fraction", augment.max_shift_fraction},
                    {"scale_min", augment.scale_min},
                    {"scale_max", augment.scale_max}};
    j["total_gen_steps"] = total_gen_steps;
    j["checkpoint_interval"] = checkpoint_interval;
    j["seed"] = seed;
    j["disable_image_cycle"] = disable_image_cycle;
    j["disable_appearance_discriminator"] = disable_appearance_discriminator;
    return j;
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j, const TrainingConfig& base) {
    if (!j.is_object()) throw std::invalid_argument("training config must be an object");
    TrainingConfig c = base;
    try {
        read_fields(j, c);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("training config: ") + e.what());
    }
    c.validate();
    return c;
}

void TrainingConfig::read_fields(const nlohmann::json& j, TrainingConfig& c) {
    for (const auto& [key, v] : j.items()) {
        if (key == "alpha") c.alpha = v.get<double>();
        else if (key == "beta1") c.beta1 = v.get<double>();
        else if (key == "beta2") c.beta2 = v.get<double>();
        else if (key == "batch_size") c.batch_size = v.get<int>();
        else if (key == "critic_steps_per_gen") c.critic_steps_per_gen = v.get<int>();
        else if (key == "sigma2") c.sigma2 = v.get<double>();
        else if (key == "lambda_I") c.weights.lambda_I = v.get<double>();
        else if (key == "lambda_N") c.weights.lambda_N = v.get<double>();
        else if (key == "lambda_z") c.weights.lambda_z = v.get<double>();
        else if (key == "lambda_p") c.weights.lambda_p = v.get<double>();
        else if (key == "normalize_cycle") c.normalize_cycle = v.get<bool>();
        else if (key == "resolution") c.network.resolution = v.get<int>();
        else if (key == "appearance_dim") c.network.appearance_dim = v.get<int>();
        else if (key == "gen_channels") c.network.gen_channels = v.get<int>();
        else if (key == "resnet_blocks") c.network.resnet_blocks = v.get<int>();
        else if (key == "disc_channels") c.network.disc_channels = v.get<int>();
        else if (key == "disc_max_channels") c.network.disc_max_channels = v.get<int>();
        else if (key == "dz_hidden") c.network.dz_hidden = v.get<int>();
        else if (key == "total_gen_steps") c.total_gen_steps = v.get<int>();
        else if (key == "checkpoint_interval") c.checkpoint_interval = v.get<int>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else if (key == "disable_image_cycle") c.disable_image_cycle = v.get<bool>();
        else if (key == "disable_appearance_discriminator") c.disable_appearance_discriminator = v.get<bool>();
        else if (key == "augment") {
            if (!v.is_object()) throw std::invalid_argument("augment must be an object");
            for (const auto& [k2, a] : v.items()) {
                if (k2 == "max_shift_fraction") c.augment.max_shift_fraction = a.get<double>();
                else if (k2 == "scale_min") c.augment.scale_min = a.get<double>();
                else if (k2 == "scale_max") c.augment.scale_max = a.get<double>();
                else throw std::invalid_argument("unknown augment key '" + k2 + "'");
            }
        } else {
            throw std::invalid_argument("unknown training config key '" + key + "'");
        }
    }
}

TrainingAborted::TrainingAborted(std::int64_t step, const std::string& term, const std::string& last_checkpoint)
    : std::runtime_error("non-finite value in " + term + " at generator step " + std::to_string(step) +
                         "; last good checkpoint: " + (last_checkpoint.empty() ? "none" : last_checkpoint)),
      step_(step),
      term_(term) {}

namespace {

optim::AdamConfig adam_config(const TrainingConfig& c) { return {c.alpha, c.beta1, c.beta2}; }

data::SamplerConfig sampler_config(const TrainingConfig& c) {
    return {c.batch_size, c.sigma2, c.network.appearance_dim, c.augment};
}

void apply(optim::Adam& opt, const ag::Var& loss, const std::string& term) {
    std::vector<ag::Var> vars;
    for (const auto& p : opt.params()) vars.push_back(p.var);
    const auto grads = ag::grad(loss, vars);
    for (const auto& g : grads)
        if (!g.value().all_finite()) throw loss::NonFiniteError(term + ".gradient");
    opt.step(grads);
}

// Config fields that must agree between a checkpoint and the run resuming it.
ordered_json resume_signature(const TrainingConfig& c) {
    ordered_json j = c.to_json();
    j.erase("total_gen_steps");
    j.erase("checkpoint_interval");
    return j;
}

std::vector<optim::Adam*> optimizers(optim::Adam& g, optim::Adam& di, optim::Adam& dn, optim::Adam& dz) {
    return {&g, &di, &dn, &dz};
}

std::pair<ordered_json, std::vector<Tensor>> read_state(const std::string& path) {
    try {
        return ckpt::decode_state(image::read_file(path + ".state"));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ".state: " + e.what());
    }
}

}  // namespace

Trainer::Trainer(TrainingConfig cfg, const data::DatasetManifest& manifest)
    : cfg_((cfg.validate(), std::move(cfg))),
      nets_(std::make_unique<nn::NetworkBundle>(nn::NetworkBundle::init(cfg_.network, cfg_.seed))),
      sampler_(manifest, sampler_config(cfg_), derive_seed(cfg_.seed, "training")),
      penalty_rng_(derive_seed(cfg_.seed, "penalty")),
      g_opt_(nets_->generator_params(), adam_config(cfg_)),
      di_opt_(nets_->network_params("d_image"), adam_config(cfg_)),
      dn_opt_(nets_->network_params("d_normal"), adam_config(cfg_)),
      dz_opt_(nets_->network_params("d_z"), adam_config(cfg_)) {
    if (manifest.resolution != cfg_.network.resolution)
        throw std::invalid_argument("dataset resolution " + std::to_string(manifest.resolution) +
                                    " differs from network resolution " + std::to_string(cfg_.network.resolution));
}

loss::LossReport Trainer::step() {
    const nn::NetworkBundle& nb = *nets_;
    const bool use_dz = !cfg_.disable_appearance_discriminator;
    const auto gens = loss::Generators::from(nb);
    const auto critics = loss::Critics::from(nb, use_dz);
    const double lambda_p = cfg_.weights.lambda_p;
    loss::LossReport rep;

    for (int k = 0; k < cfg_.critic_steps_per_gen; ++k) {
        const data::Batch b = sampler_.next();
        const ag::Var images = ag::Var::constant(b.images);
        const ag::Var normals = ag::Var::constant(b.normals);
        const ag::Var z = ag::Var::constant(b.z);
        ag::Var fake_image, fake_normals, fake_z;
        {
            ag::NoGradGuard frozen;
            fake_image = nb.g_image(z, normals);
            std::tie(fake_normals, fake_z) = nb.encode(images);
        }
        const auto ci = loss::critic_loss(critics.d_image, images, fake_image, lambda_p, penalty_rng_, "D_I");
        apply(di_opt_, ci.loss, "D_I");
        ++state_.d_image_steps;
        rep.gp_I = ci.penalty;
        rep.critic_I = ci.loss.item();

        const auto cn = loss::critic_loss(critics.d_normal, normals, fake_normals, lambda_p, penalty_rng_, "D_N");
        apply(dn_opt_, cn.loss, "D_N");
        ++state_.d_normal_steps;
        rep.gp_N = cn.penalty;
        rep.critic_N = cn.loss.item();

        if (use_dz) {
            const auto cz = loss::critic_loss(critics.d_z, z, fake_z, lambda_p, penalty_rng_, "D_z");
            apply(dz_opt_, cz.loss, "D_z");
            ++state_.d_z_steps;
            rep.gp_z = cz.penalty;
            rep.critic_z = cz.loss.item();
        }
    }

    const data::Batch b = sampler_.next();
    const auto joint = loss::joint_generator_loss(gens, critics, ag::Var::constant(b.images),
                                                  ag::Var::constant(b.normals), ag::Var::constant(b.z),
                                                  cfg_.effective_weights(), cfg_.normalize_cycle);
    apply(g_opt_, joint.total, "generator");
    ++state_.gen_steps;

    const auto& g = joint.report;
    rep.adv_I = g.adv_I;
    rep.adv_N = g.adv_N;
    rep.adv_z = g.adv_z;
    rep.cyc_N = g.cyc_N;
    rep.cyc_I = g.cyc_I;
    rep.cyc_z = g.cyc_z;
    rep.total = g.total;
    return rep;
}

void Trainer::save_checkpoint(const std::string& path) const {
    ckpt::save_parameters(*nets_, path);
    ordered_json meta;
    meta["config"] = cfg_.to_json();
    meta["counters"] = {{"gen_steps", state_.gen_steps},
                        {"d_image_steps", state_.d_image_steps},
                        {"d_normal_steps", state_.d_normal_steps},
                        {"d_z_steps", state_.d_z_steps}};
    meta["ablations"] = {{"disable_image_cycle", cfg_.disable_image_cycle},
                         {"disable_appearance_discriminator", cfg_.disable_appearance_discriminator}};
    meta["rng"] = {{"sampler", sampler_.state()}, {"penalty", rng_state(penalty_rng_)}};
    std::vector<Tensor> arrays;
    ordered_json opt_meta = ordered_json::array();
    for (const optim::Adam* opt : {&g_opt_, &di_opt_, &dn_opt_, &dz_opt_}) {
        opt_meta.push_back({{"steps", opt->steps()}, {"tensors", opt->params().size()}});
        for (const auto& m : opt->first_moments()) arrays.push_back(m);
        for (const auto& v : opt->second_moments()) arrays.push_back(v);
    }
    meta["optimizers"] = opt_meta;
    image::write_file(path + ".state", ckpt::encode_state(meta, arrays));
}

void Trainer::load_checkpoint(const std::string& path) {
    auto [meta, arrays] = read_state(path);
    try {
        const TrainingConfig saved = TrainingConfig::from_json(meta.at("config"));
        if (resume_signature(saved) != resume_signature(cfg_))
            throw std::runtime_error(path + ": checkpoint was written with a different training config");
        ckpt::load_parameters(*nets_, path);
        const auto& c = meta.at("counters");
        state_.gen_steps = c.at("gen_steps").get<std::int64_t>();
        state_.d_image_steps = c.at("d_image_steps").get<std::int64_t>();
        state_.d_normal_steps = c.at("d_normal_steps").get<std::int64_t>();
        state_.d_z_steps = c.at("d_z_steps").get<std::int64_t>();
        sampler_.set_state(meta.at("rng").at("sampler").get<std::string>());
        set_rng_state(penalty_rng_, meta.at("rng").at("penalty").get<std::string>());
        std::size_t at = 0;
        const auto& opt_meta = meta.at("optimizers");
        auto opts = optimizers(g_opt_, di_opt_, dn_opt_, dz_opt_);
        if (opt_meta.size() != opts.size()) throw std::runtime_error(path + ".state: optimizer count mismatch");
        for (std::size_t i = 0; i < opts.size(); ++i) {
            const std::size_t n = opts[i]->params().size();
            if (opt_meta[i].at("tensors").get<std::size_t>() != n || at + 2 * n > arrays.size())
                throw std::runtime_error(path + ".state: optimizer layout mismatch");
            std::vector<Tensor> m(arrays.begin() + at, arrays.begin() + at + n);
            std::vector<Tensor> v(arrays.begin() + at + n, arrays.begin() + at + 2 * n);
            opts[i]->restore(opt_meta[i].at("steps").get<std::int64_t>(), std::move(m), std::move(v));
            at += 2 * n;
        }
        if (at != arrays.size()) throw std::runtime_error(path + ".state: unexpected extra arrays");
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ".state: " + e.what());
    }
}

TrainingConfig checkpoint_config(const std::string& path) {
    const auto [meta, arrays] = read_state(path);
    try {
        return TrainingConfig::from_json(meta.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ".state: " + e.what());
    }
}

nn::NetworkBundle load_networks(const std::string& path) {
    const TrainingConfig cfg = checkpoint_config(path);
    auto nb = nn::NetworkBundle::init(cfg.network, cfg.seed);
    ckpt::load_parameters(nb, path);
    return nb;
}

std::string checkpoint_name(std::int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "checkpoint_%06lld.ckpt", static_cast<long long>(step));
    return buf;
}

FitResult fit(const TrainingConfig& cfg, const data::DatasetManifest& manifest, const FitOptions& opts) {
    cfg.validate();
    if (opts.out_dir.empty()) throw std::invalid_argument("fit needs an output directory");
    fs::create_directories(opts.out_dir);
    const fs::path out(opts.out_dir);
    FitResult result;
    result.metrics = (out / "metrics.jsonl").string();

    Trainer trainer(cfg, manifest);
    std::string last_good;
    std::vector<std::string> kept;
    if (opts.resume_from) {
        trainer.load_checkpoint(*opts.resume_from);
        last_good = *opts.resume_from;
        std::ifstream in(result.metrics);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (nlohmann::json::parse(line).at("step").get<std::int64_t>() <= trainer.state().gen_steps)
                kept.push_back(line);
        }
    } else {
        last_good = (out / checkpoint_name(0)).string();
        trainer.save_checkpoint(last_good);
    }
    std::ofstream metrics(result.metrics, std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + result.metrics);
    for (const auto& line : kept) metrics << line << '\n';

    const auto start = std::chrono::steady_clock::now();
    while (trainer.state().gen_steps < cfg.total_gen_steps) {
        loss::LossReport rep;
        try {
            rep = trainer.step();
        } catch (const loss::NonFiniteError& e) {
            throw TrainingAborted(trainer.state().gen_steps + 1, e.term(), last_good);
        }
        const std::int64_t step = trainer.state().gen_steps;
        ordered_json rec;
        rec["step"] = step;
        const ordered_json terms = rep.to_json();
        for (const auto& [k, v] : terms.items()) rec[k] = v;
        rec["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        metrics << rec.dump() << '\n';
        metrics.flush();
        if (opts.on_step) opts.on_step(step, rep);
        if (step % cfg.checkpoint_interval == 0) {
            last_good = (out / checkpoint_name(step)).string();
            trainer.save_checkpoint(last_good);
        }
    }
    result.checkpoint = (out / "final.ckpt").string();
    trainer.save_checkpoint(result.checkpoint);
    result.state = trainer.state();
    result.parameter_checksum = ckpt::parameter_checksum(trainer.networks());
    return result;
}

}  // namespace scgan::train
