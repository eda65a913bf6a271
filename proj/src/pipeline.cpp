#include "mmreg/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mmreg/error.hpp"
#include "mmreg/evalstats.hpp"
#include "mmreg/rng.hpp"

namespace mmreg {

using nlohmann::json;

std::string to_string(TrainMode mode) {
    switch (mode) {
    case TrainMode::unsupervised:
        return "unsupervised";
    case TrainMode::supervised:
        return "supervised";
    case TrainMode::direct:
        return "direct";
    }
    return "unknown";
}

TrainMode train_mode_from_string(std::string_view name) {
    if (name == "unsupervised") return TrainMode::unsupervised;
    if (name == "supervised") return TrainMode::supervised;
    if (name == "direct") return TrainMode::direct;
    throw ParameterError("unknown training mode: " + std::string(name));
}

void TrainConfig::validate() const {
    if (steps_per_epoch == 0) throw ParameterError("TrainConfig: steps_per_epoch must be positive");
    if (batch_size == 0) throw ParameterError("TrainConfig: batch_size must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ParameterError("TrainConfig: lr must be positive");
    if (!(direct_lr > 0.0) || !std::isfinite(direct_lr)) {
        throw ParameterError("TrainConfig: direct_lr must be positive");
    }
    if (direct_iterations.empty()) throw ParameterError("TrainConfig: direct_iterations must not be empty");
    if (!(direct_grad_sigma >= 0.0) || !std::isfinite(direct_grad_sigma)) {
        throw ParameterError("TrainConfig: direct_grad_sigma must be nonnegative");
    }
    if (!(direct_epsilon > 0.0) || !std::isfinite(direct_epsilon)) {
        throw ParameterError("TrainConfig: direct_epsilon must be positive");
    }
    if (threads == 0) throw ParameterError("TrainConfig: threads must be positive");
    loss.validate();
}

// ---------------------------------------------------------------------------
// Config and log files

namespace {

template <typename T>
T get_field(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParameterError(std::string("train config: bad value for '") + key + "': " + e.what());
    }
}

} // namespace

TrainConfig parse_train_config(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParameterError(std::string("train config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParameterError("train config: top level must be an object");
    TrainConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "mode") {
            cfg.mode = train_mode_from_string(get_field<std::string>(j, "mode"));
        } else if (key == "epochs") {
            cfg.epochs = get_field<std::size_t>(j, "epochs");
        } else if (key == "steps_per_epoch") {
            cfg.steps_per_epoch = get_field<std::size_t>(j, "steps_per_epoch");
        } else if (key == "batch_size") {
            cfg.batch_size = get_field<std::size_t>(j, "batch_size");
        } else if (key == "lr") {
            cfg.lr = get_field<double>(j, "lr");
        } else if (key == "lambda") {
            cfg.loss.lambda = get_field<double>(j, "lambda");
        } else if (key == "bins") {
            cfg.loss.bins = get_field<std::size_t>(j, "bins");
        } else if (key == "parzen_width") {
            cfg.loss.parzen_width = get_field<double>(j, "parzen_width");
        } else if (key == "split") {
            const auto s = get_field<std::vector<std::size_t>>(j, "split");
            if (s.size() != 3) throw ParameterError("train config: split must be [train, val, test]");
            cfg.split = {s[0], s[1], s[2]};
        } else if (key == "seed") {
            cfg.seed = get_field<std::uint64_t>(j, "seed");
        } else if (key == "direct_iterations") {
            cfg.direct_iterations = get_field<std::vector<std::size_t>>(j, "direct_iterations");
        } else if (key == "direct_lr") {
            cfg.direct_lr = get_field<double>(j, "direct_lr");
        } else if (key == "direct_grad_sigma") {
            cfg.direct_grad_sigma = get_field<double>(j, "direct_grad_sigma");
        } else if (key == "direct_patience") {
            cfg.direct_patience = get_field<std::size_t>(j, "direct_patience");
        } else if (key == "direct_epsilon") {
            cfg.direct_epsilon = get_field<double>(j, "direct_epsilon");
        } else if (key == "threads") {
            cfg.threads = get_field<std::size_t>(j, "threads");
        } else if (key == "timing") {
            cfg.timing = get_field<bool>(j, "timing");
        } else {
            throw ParameterError("train config: unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open train config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str());
}

void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["mode"] = to_string(cfg.mode);
    j["epochs"] = cfg.epochs;
    j["steps_per_epoch"] = cfg.steps_per_epoch;
    j["batch_size"] = cfg.batch_size;
    j["lr"] = cfg.lr;
    j["lambda"] = cfg.loss.lambda;
    j["bins"] = cfg.loss.bins;
    j["parzen_width"] = cfg.loss.parzen_width;
    j["split"] = {cfg.split.train, cfg.split.val, cfg.split.test};
    j["seed"] = cfg.seed;
    j["direct_iterations"] = cfg.direct_iterations;
    j["direct_lr"] = cfg.direct_lr;
    j["direct_grad_sigma"] = cfg.direct_grad_sigma;
    j["direct_patience"] = cfg.direct_patience;
    j["direct_epsilon"] = cfg.direct_epsilon;
    j["threads"] = cfg.threads;
    j["timing"] = cfg.timing;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write train config " + path.string());
    out << j.dump(2) << '\n';
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write train log " + path.string());
    if (!log.epochs.empty() || log.iterations.empty()) {
        out << "epoch,train_loss,val_loss,val_dice_median,val_mi_median,seconds\n";
        for (const auto& r : log.epochs) {
            out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
                << format_double(r.val_dice_median) << ',' << format_double(r.val_mi_median) << ','
                << format_double(r.seconds) << '\n';
        }
    } else {
        out << "iteration,loss\n";
        for (std::size_t i = 0; i < log.iterations.size(); ++i) {
            out << i << ',' << format_double(log.iterations[i]) << '\n';
        }
    }
}

TrainLog read_train_log_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open train log " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty train log " + path.string());
    TrainLog log;
    const bool per_epoch = line.rfind("epoch,", 0) == 0;
    if (!per_epoch && line != "iteration,loss") throw DataError("unrecognized train log header in " + path.string());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
        try {
            if (per_epoch) {
                if (cells.size() != 6) throw DataError("train log row needs 6 columns: " + line);
                log.epochs.push_back({std::stoull(cells[0]), std::stod(cells[1]), std::stod(cells[2]),
                                      std::stod(cells[3]), std::stod(cells[4]), std::stod(cells[5])});
            } else {
                if (cells.size() != 2) throw DataError("train log row needs 2 columns: " + line);
                log.iterations.push_back(std::stod(cells[1]));
            }
        } catch (const std::logic_error&) {
            throw DataError("malformed train log row: " + line);
        }
    }
    return log;
}

// ---------------------------------------------------------------------------
// Splitting

DatasetSplit split_dataset(const std::vector<PairRecord>& records, const TrainConfig& cfg) {
    if (cfg.split.total() != records.size()) {
        throw ParameterError("split counts (" + std::to_string(cfg.split.train) + ", " +
                             std::to_string(cfg.split.val) + ", " + std::to_string(cfg.split.test) +
                             ") do not sum to the dataset size " + std::to_string(records.size()));
    }
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        groups[r.source_id.empty() ? r.id : r.source_id].push_back(i);
    }
    std::vector<const std::vector<std::size_t>*> order;
    for (const auto& [key, members] : groups) order.push_back(&members);
    Xoshiro256pp rng(cfg.seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }

    DatasetSplit out;
    const std::array<std::size_t, 3> capacity{cfg.split.train, cfg.split.val, cfg.split.test};
    std::array<std::vector<PairRecord>*, 3> subsets{&out.train, &out.val, &out.test};
    for (const auto* members : order) {
        std::size_t target = 0;
        while (target < 3 && subsets[target]->size() + members->size() > capacity[target]) ++target;
        if (target == 3) {
            throw ParameterError("split counts cannot be met without dividing a source group of " +
                                 std::to_string(members->size()) + " records");
        }
        for (std::size_t idx : *members) subsets[target]->push_back(records[idx]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kParamMagic[4] = {'N', 'E', 'T', 'P'};
constexpr char kAdamMagic[4] = {'A', 'D', 'A', 'M'};

void put_u32(std::ostream& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::ostream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_floats(std::ostream& out, const nn::Buffer<float>& values) {
    for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

void put_blocks(std::ostream& out, const NetParams<float>& params) {
    put_u32(out, static_cast<std::uint32_t>(params.blocks.size()));
    for (const auto& b : params.blocks) {
        put_u32(out, static_cast<std::uint32_t>(b.name.size()));
        out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
        put_u32(out, 4);
        put_u32(out, static_cast<std::uint32_t>(b.out_channels));
        put_u32(out, static_cast<std::uint32_t>(b.in_channels));
        put_u32(out, 3);
        put_u32(out, 3);
        put_floats(out, b.weight);
        put_floats(out, b.bias);
    }
}

class Reader {
public:
    Reader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

    bool at_end() const { return pos_ == bytes_.size(); }

    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw DataError("checkpoint " + name_ + " is truncated or corrupt");
    }

    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint64_t uint(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    void floats(nn::Buffer<float>& dst, std::size_t n) {
        need(4 * n);
        dst.resize(n);
        for (auto& f : dst) f = std::bit_cast<float>(static_cast<std::uint32_t>(uint(4)));
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError("checkpoint " + name_ + ": " + what);
    }

private:
    std::string bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

NetParams<float> read_blocks(Reader& r) {
    const auto count = r.uint(4);
    if (count != kLayerTable.size()) r.fail("expected " + std::to_string(kLayerTable.size()) + " layers");
    NetParams<float> params;
    for (std::size_t i = 0; i < count; ++i) {
        ParamBlock<float> b;
        const auto name_len = r.uint(4);
        if (name_len > 256) r.fail("implausible layer name length");
        b.name = r.take(static_cast<std::size_t>(name_len));
        if (r.uint(4) != 4) r.fail("layer " + b.name + " must have rank 4");
        b.out_channels = static_cast<std::size_t>(r.uint(4));
        b.in_channels = static_cast<std::size_t>(r.uint(4));
        if (r.uint(4) != 3 || r.uint(4) != 3) r.fail("layer " + b.name + " is not 3x3");
        const auto& spec = kLayerTable[i];
        if (b.name != spec.name || b.out_channels != spec.out_channels || b.in_channels != spec.in_channels) {
            r.fail("layer " + std::to_string(i) + " does not match the architecture (" + b.name + ")");
        }
        r.floats(b.weight, 9 * b.in_channels * b.out_channels);
        r.floats(b.bias, b.out_channels);
        params.blocks.push_back(std::move(b));
    }
    return params;
}

} // namespace

void save_checkpoint(const NetParams<float>& params, const AdamState<float>* state,
                     const std::filesystem::path& path) {
    params.check_architecture();
    std::ostringstream out;
    out.write(kParamMagic, 4);
    put_blocks(out, params);
    if (state != nullptr) {
        out.write(kAdamMagic, 4);
        put_u64(out, state->step);
        put_blocks(out, state->first_moment);
        put_blocks(out, state->second_moment);
    }
    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot write checkpoint " + path.string());
    const std::string bytes = out.str();
    file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!file) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << file.rdbuf();
    Reader r(ss.str(), path.string());
    if (r.take(4) != std::string(kParamMagic, 4)) r.fail("bad magic");
    Checkpoint ck;
    ck.params = read_blocks(r);
    if (!r.at_end()) {
        if (r.take(4) != std::string(kAdamMagic, 4)) r.fail("bad optimizer section magic");
        AdamState<float> st;
        st.step = r.uint(8);
        st.first_moment = read_blocks(r);
        st.second_moment = read_blocks(r);
        if (!r.at_end()) r.fail("trailing bytes");
        ck.adam = std::move(st);
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct PairOutcome {
    double loss = 0.0;
    NetParams<float> grads;
};

LossValue pair_loss(TrainMode mode, const PairRecord& r, const DisplacementField& phi, const LossConfig& loss) {
    if (mode == TrainMode::supervised) return total_loss_supervised(*r.label, r.moving, phi, loss);
    return total_loss_unsupervised(r.fixed, r.moving, phi, loss);
}

PairOutcome pair_gradient(TrainMode mode, const NetParams<float>& params, const PairRecord& r,
                          const LossConfig& loss) {
    auto fwd = forward(params, r.fixed, r.moving);
    const LossValue lv = pair_loss(mode, r, fwd.field, loss);
    return {lv.value, backward(params, fwd.tape, *lv.grad_field)};
}

/// Runs `job(i)` for i in [0, n) on up to `threads` workers; each index writes only its own slot.
template <typename Job>
void parallel_for(std::size_t n, std::size_t threads, const Job& job) {
    const std::size_t workers = std::min(threads, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) job(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

void check_records(TrainMode mode, const std::vector<PairRecord>& records, const char* what) {
    for (const auto& r : records) {
        r.validate();
        if (mode == TrainMode::supervised && !r.label) {
            throw DataError(std::string(what) + " record " + r.id + " has no label for supervised training");
        }
    }
}

/// Index stream for one epoch: consecutive passes over fresh permutations of the training set.
class EpochSampler {
public:
    EpochSampler(std::size_t n, std::uint64_t seed, std::size_t epoch)
        : n_(n), epoch_seed_(derive_seed(seed, epoch)) {}

    std::size_t operator()(std::size_t k) {
        const std::size_t pass = k / n_;
        if (pass != pass_ || perm_.empty()) {
            perm_.resize(n_);
            std::iota(perm_.begin(), perm_.end(), std::size_t{0});
            Xoshiro256pp rng(derive_seed(epoch_seed_, pass));
            for (std::size_t i = n_; i > 1; --i) std::swap(perm_[i - 1], perm_[rng.below(i)]);
            pass_ = pass;
        }
        return perm_[k % n_];
    }

private:
    std::size_t n_;
    std::uint64_t epoch_seed_;
    std::size_t pass_ = 0;
    std::vector<std::size_t> perm_;
};

double mean_loss(TrainMode mode, const NetParams<float>& params, const std::vector<PairRecord>& records,
                 const LossConfig& loss, std::size_t threads, std::vector<DisplacementField>* fields = nullptr) {
    if (records.empty()) return 0.0;
    std::vector<double> losses(records.size());
    std::vector<DisplacementField> local(records.size());
    parallel_for(records.size(), threads, [&](std::size_t i) {
        local[i] = predict(params, records[i].fixed, records[i].moving);
        losses[i] = pair_loss(mode, records[i], local[i], loss).value;
    });
    if (fields != nullptr) *fields = std::move(local);
    double sum = 0.0;
    for (double l : losses) sum += l;
    return sum / static_cast<double>(records.size());
}

void validate_epoch(TrainMode mode, const NetParams<float>& params, const std::vector<PairRecord>& val,
                    const TrainConfig& cfg, EpochRecord& rec) {
    if (val.empty()) return;
    std::vector<DisplacementField> fields;
    rec.val_loss = mean_loss(mode, params, val, cfg.loss, cfg.threads, &fields);
    const EvalReport report = evaluate_pairs(val, fields, EvalConfig{cfg.loss.bins, BinarizeMethod::otsu()});
    rec.val_dice_median = report.aggregate("dice_after").median;
    rec.val_mi_median = report.aggregate("mi_after").median;
}

TrainResult run_training(TrainMode mode, const std::vector<PairRecord>& train_set,
                         const std::vector<PairRecord>& val, const TrainConfig& cfg, const Checkpoint* resume,
                         const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty() && cfg.epochs > 0) throw ParameterError("training set is empty");
    check_records(mode, train_set, "training");
    check_records(mode, val, "validation");

    TrainResult result;
    std::size_t first_epoch = 1;
    if (resume != nullptr) {
        resume->params.check_architecture();
        result.params = resume->params;
        result.adam = resume->adam ? *resume->adam : AdamState<float>::fresh();
        if (result.adam.step % cfg.steps_per_epoch != 0) {
            throw ParameterError("checkpoint optimizer step is not at an epoch boundary for this config");
        }
        first_epoch = static_cast<std::size_t>(result.adam.step / cfg.steps_per_epoch) + 1;
    } else {
        result.params = init_params<float>(cfg.seed, true);
        result.adam = AdamState<float>::fresh();
        EpochRecord initial;
        initial.train_loss = mean_loss(mode, result.params, train_set, cfg.loss, cfg.threads);
        validate_epoch(mode, result.params, val, cfg, initial);
        result.log.epochs.push_back(initial);
    }

    const float inv_batch = 1.0f / static_cast<float>(cfg.batch_size);
    for (std::size_t epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        EpochSampler sampler(train_set.size(), cfg.seed, epoch);
        double loss_sum = 0.0;
        std::size_t k = 0;
        for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
            std::vector<std::size_t> batch(cfg.batch_size);
            for (auto& idx : batch) idx = sampler(k++);
            std::vector<PairOutcome> outcomes(batch.size());
            parallel_for(batch.size(), cfg.threads, [&](std::size_t b) {
                outcomes[b] = pair_gradient(mode, result.params, train_set[batch[b]], cfg.loss);
            });
            NetParams<float> grads = NetParams<float>::zeros();
            double batch_loss = 0.0;
            for (const auto& o : outcomes) {
                if (!std::isfinite(o.loss)) {
                    throw DataError("training loss became non-finite at epoch " + std::to_string(epoch) +
                                    ", step " + std::to_string(step));
                }
                accumulate(grads, o.grads, inv_batch);
                batch_loss += o.loss;
            }
            loss_sum += batch_loss / static_cast<double>(batch.size());
            adam_step(result.params, grads, result.adam, cfg.lr);
            if (!result.params.all_finite()) {
                throw DataError("parameters became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                std::to_string(step));
            }
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(cfg.steps_per_epoch);
        validate_epoch(mode, result.params, val, cfg, rec);
        if (cfg.timing) {
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
        result.log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec, result.params, result.adam);
    }
    return result;
}

} // namespace

TrainResult train_unsupervised(const std::vector<PairRecord>& train_set, const std::vector<PairRecord>& val,
                               const TrainConfig& cfg, const Checkpoint* resume, const EpochCallback& on_epoch) {
    if (cfg.mode != TrainMode::unsupervised) throw ParameterError("train_unsupervised needs mode unsupervised");
    return run_training(TrainMode::unsupervised, train_set, val, cfg, resume, on_epoch);
}

TrainResult train_supervised(const std::vector<PairRecord>& train_set, const std::vector<PairRecord>& val,
                             const TrainConfig& cfg, const Checkpoint* resume, const EpochCallback& on_epoch) {
    if (cfg.mode != TrainMode::supervised) throw ParameterError("train_supervised needs mode supervised");
    return run_training(TrainMode::supervised, train_set, val, cfg, resume, on_epoch);
}

TrainResult train(const std::vector<PairRecord>& train_set, const std::vector<PairRecord>& val,
                  const TrainConfig& cfg, const Checkpoint* resume, const EpochCallback& on_epoch) {
    switch (cfg.mode) {
    case TrainMode::unsupervised:
        return train_unsupervised(train_set, val, cfg, resume, on_epoch);
    case TrainMode::supervised:
        return train_supervised(train_set, val, cfg, resume, on_epoch);
    case TrainMode::direct:
        break;
    }
    throw ParameterError("mode 'direct' has no training phase; use per-pair direct registration instead");
}

// ---------------------------------------------------------------------------
// Direct optimization

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kPlateauTolerance = 1e-6;

struct FieldAdam {
    std::vector<double> m, v;
    std::uint64_t step = 0;

    explicit FieldAdam(std::size_t n) : m(2 * n, 0.0), v(2 * n, 0.0) {}

    void apply(DisplacementField& phi, const DisplacementField& grad, double lr, double eps) {
        constexpr double b1 = 0.9, b2 = 0.999;
        ++step;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
        const std::size_t n = phi.size();
        for (std::size_t i = 0; i < 2 * n; ++i) {
            double& p = i < n ? phi.dx()[i] : phi.dy()[i - n];
            const double g = i < n ? grad.dx()[i] : grad.dy()[i - n];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            p -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

GrayImage pyramid_level(const GrayImage& img, std::size_t w, std::size_t h) {
    if (w == img.width() && h == img.height()) return img;
    const double factor = static_cast<double>(img.width()) / static_cast<double>(w);
    return resize_bilinear(gaussian_blur(img, 0.5 * factor), w, h);
}

} // namespace

DirectResult register_direct(const GrayImage& fixed, const GrayImage& moving, const TrainConfig& cfg) {
    cfg.validate();
    if (!fixed.same_shape(moving)) throw ParameterError("register_direct: fixed and moving differ in size");
    if (fixed.size() == 0) throw ParameterError("register_direct: empty images");

    const std::size_t levels = cfg.direct_iterations.size();
    DirectResult result;
    result.initial_loss =
        total_loss_unsupervised(fixed, moving, identity_field(fixed.width(), fixed.height()), cfg.loss).value;

    DisplacementField phi;
    for (std::size_t level = 0; level < levels; ++level) {
        const std::size_t shift = levels - 1 - level;
        const std::size_t w = std::max<std::size_t>(1, fixed.width() >> shift);
        const std::size_t h = std::max<std::size_t>(1, fixed.height() >> shift);
        const GrayImage f = pyramid_level(fixed, w, h);
        const GrayImage m = pyramid_level(moving, w, h);
        phi = level == 0 ? identity_field(w, h) : upsample_field(phi, w, h);

        const bool last = level + 1 == levels;
        FieldAdam adam(phi.size());
        // The zero field is the incumbent, so the result never scores worse than no registration.
        DisplacementField best = identity_field(w, h);
        double best_loss = result.initial_loss;
        double level_best = std::numeric_limits<double>::infinity();
        std::size_t stalled = 0;
        for (std::size_t it = 0; it < cfg.direct_iterations[level]; ++it) {
            const LossValue lv = total_loss_unsupervised(f, m, phi, cfg.loss);
            if (!std::isfinite(lv.value)) {
                throw DataError("register_direct: loss became non-finite at level " + std::to_string(level) +
                                ", iteration " + std::to_string(it));
            }
            result.log.iterations.push_back(lv.value);
            if (last && lv.value < best_loss) {
                best_loss = lv.value;
                best = phi;
            }
            if (it == 0 || lv.value < level_best - kPlateauTolerance * std::abs(level_best)) {
                level_best = lv.value;
                stalled = 0;
            } else if (cfg.direct_patience > 0 && ++stalled >= cfg.direct_patience) {
                break;
            }
            DisplacementField grad = *lv.grad_field;
            if (cfg.direct_grad_sigma > 0.0) {
                // Sobolev-style preconditioning: neighbouring pixels move together.
                grad.dx() = gaussian_blur(GrayImage(w, h, std::move(grad.dx())), cfg.direct_grad_sigma).data();
                grad.dy() = gaussian_blur(GrayImage(w, h, std::move(grad.dy())), cfg.direct_grad_sigma).data();
            }
            // Cosine decay within each level damps Adam's oscillation near the optimum.
            const double progress = static_cast<double>(it) / static_cast<double>(cfg.direct_iterations[level]);
            adam.apply(phi, grad, cfg.direct_lr * 0.5 * (1.0 + std::cos(kPi * progress)), cfg.direct_epsilon);
        }
        if (last) {
            const double final_loss = total_loss_unsupervised(f, m, phi, cfg.loss).value;
            if (final_loss < best_loss) {
                best_loss = final_loss;
                best = phi;
            }
            phi = std::move(best);
            result.final_loss = best_loss;
        }
    }
    result.field = std::move(phi);
    return result;
}

DisplacementField register_with_model(const NetParams<float>& params, const GrayImage& fixed,
                                      const GrayImage& moving) {
    return predict(params, fixed, moving);
}

} // namespace mmreg
