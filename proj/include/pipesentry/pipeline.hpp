// The K-stage pipeline: synchronous all-forward-then-all-backward schedule
// with micro-batch accumulation, direct or server-relayed routing, in-band
// verification, and the restart -> central -> skip recovery ladder.
//
// Stages are numbered 1..K. Stage 1 feeds data and stage K owns the loss;
// both are trusted. Stage i >= 2 holds a duplicate of stage i-1's module and
// re-executes its predecessor's claimed work to verify it.
#pragma once

#include <chrono>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "pipesentry/adversary.hpp"
#include "pipesentry/dataset.hpp"
#include "pipesentry/defense.hpp"
#include "pipesentry/message.hpp"
#include "pipesentry/metrics.hpp"
#include "pipesentry/ops.hpp"
#include "pipesentry/stage.hpp"

namespace pipesentry {

struct PipelineConfig {
    int stages = 6;      // K; >= 4 so jump connections are defined somewhere
    int width = 32;      // uniform boundary width d
    int input_dim = 32;
    int classes = 4;
    int batch_size = 4;
    int micro_batch = 1;
    double lr = 0.05;
    int iterations = 2000;
    PipelineMode mode = PipelineMode::kBaseline;
    double tolerance = 0.0;
    RecoveryPolicy policy;
    uint64_t init_seed = 42;
    uint64_t data_seed = 42;
    uint64_t adversary_seed = 42;
    uint64_t schedule_seed = 42;
    // Empty: default stacks (affine+tanh per stage, plain affine loss head).
    std::vector<std::vector<LayerSpec>> stage_specs;

    int micro_count() const { return batch_size / micro_batch; }

    void validate() const {
        if (stages < 4) {
            throw ConfigError("pipeline.stages must be >= 4 (jump connections undefined for " +
                              std::to_string(stages) + " stages)");
        }
        if (width < 1) throw ConfigError("pipeline.width must be >= 1");
        if (input_dim < 1) throw ConfigError("dataset.input_dim must be >= 1");
        if (classes < 2) throw ConfigError("dataset.classes must be >= 2");
        if (batch_size < 1) throw ConfigError("pipeline.batch_size must be >= 1");
        if (micro_batch < 1 || batch_size % micro_batch != 0) {
            throw ConfigError("pipeline.micro_batch must divide pipeline.batch_size (" +
                              std::to_string(micro_batch) + " vs " + std::to_string(batch_size) +
                              ")");
        }
        if (!(lr == lr) || lr < 0.0) throw ConfigError("pipeline.lr must be a finite value >= 0");
        if (iterations < 0) throw ConfigError("pipeline.iterations must be >= 0");
        if (tolerance < 0.0) throw ConfigError("pipeline.tolerance must be >= 0");
        if (policy.restart_cap < 1) throw ConfigError("pipeline.restart_cap must be >= 1");
        if (!stage_specs.empty() && static_cast<int>(stage_specs.size()) != stages) {
            throw ConfigError("stage spec list must have one entry per stage");
        }
    }

    std::vector<std::vector<LayerSpec>> resolve_specs() const {
        if (!stage_specs.empty()) return stage_specs;
        std::vector<std::vector<LayerSpec>> specs;
        specs.push_back({LayerSpec::affine(input_dim, width),
                         LayerSpec::nonlinearity(Activation::kTanh)});
        for (int i = 2; i < stages; ++i) {
            specs.push_back({LayerSpec::affine(width, width),
                             LayerSpec::nonlinearity(Activation::kTanh)});
        }
        specs.push_back({LayerSpec::affine(width, classes)});
        return specs;
    }
};

struct AttemptResult {
    bool completed = false;
    double loss = 0.0;
    std::vector<AlertEvent> alerts;   // at most one: an attempt stops at its first alert
    bool attack_effective = false;    // some transmission was actually corrupted or silenced
};

class AbortedRunError : public std::runtime_error {
public:
    AbortedRunError(const std::string& why, RunMetrics partial)
        : std::runtime_error(why), metrics(std::move(partial)) {}
    RunMetrics metrics;
};

class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)), mode_(cfg_.mode) {
        cfg_.validate();
        const auto specs = cfg_.resolve_specs();
        RandomStream init(cfg_.init_seed, "init");
        stages_.reserve(specs.size());
        for (size_t i = 0; i < specs.size(); ++i)
            stages_.emplace_back(specs[i], static_cast<int>(i) + 1, init);
        for (int i = 1; i < cfg_.stages; ++i) {
            if (stage(i).out_width() != stage(i + 1).in_width()) {
                throw ConfigError("stage widths do not chain at boundary " + std::to_string(i) +
                                  "->" + std::to_string(i + 1));
            }
            if (i >= 2 && stage(i).in_width() != cfg_.width) {
                throw ConfigError("interior boundaries must all have width " +
                                  std::to_string(cfg_.width) + " for skip routing to stay valid");
            }
        }
        dups_ = stages_;  // dup of stage i, held at stage i+1; dup of stage K unused
        last_grads_.resize(stages_.size());
    }

    const PipelineConfig& config() const { return cfg_; }
    int num_stages() const { return cfg_.stages; }
    PipelineMode mode() const { return mode_; }
    bool skip_installed() const { return skip_.has_value(); }
    std::optional<std::pair<int, int>> skip() const { return skip_; }
    const std::set<int>& frozen_owners() const { return frozen_owners_; }
    const std::set<int>& frozen_dup_owners() const { return frozen_dup_owners_; }
    const std::map<std::string, long long>& message_counts() const { return message_counts_; }
    long long recomputations() const { return recomputations_; }

    StageModule& stage(int i) { return stages_[static_cast<size_t>(i) - 1]; }
    const StageModule& stage(int i) const { return stages_[static_cast<size_t>(i) - 1]; }
    // Duplicate of stage i, physically held by stage i+1. Valid for i in [1, K-1].
    StageModule& dup_of(int i) { return dups_[static_cast<size_t>(i) - 1]; }
    const StageModule& dup_of(int i) const { return dups_[static_cast<size_t>(i) - 1]; }

    void set_trace(std::function<void(const PipelineMessage&)> sink) { trace_ = std::move(sink); }

    bool is_active(int i) const {
        return !skip_ || (i != skip_->first && i != skip_->second);
    }

    std::vector<int> active_chain() const {
        std::vector<int> chain;
        for (int i = 1; i <= cfg_.stages; ++i)
            if (is_active(i)) chain.push_back(i);
        return chain;
    }

    void escalate_to_central() { mode_ = PipelineMode::kRobustCentral; }

    // Permanently bypasses the adjacent pair and freezes the two modules whose
    // duplicate counterparts become unreachable, keeping every reachable
    // (owner, duplicate) pair bitwise consistent for the rest of the run.
    void install_skip(std::pair<int, int> pair) {
        if (skip_) throw StructureError("skip pair already installed");
        if (pair.second != pair.first + 1 || pair.first < 2 || pair.second > cfg_.stages - 1) {
            throw StructureError("skip pair must be an adjacent interior pair, got {" +
                                 std::to_string(pair.first) + "," + std::to_string(pair.second) +
                                 "}");
        }
        skip_ = pair;
        frozen_owners_.insert(pair.first - 1);
        frozen_dup_owners_.insert(pair.second);  // duplicate lives at stage pair.second + 1
    }

    // One scheduling pass over the whole batch: all micro-batches forward,
    // then all backward, verification checks at every consumption point. The
    // attempt stops at the first alert; parameter updates are NOT applied
    // (call commit_update after a completed attempt).
    AttemptResult run_attempt(const Tensor& batch_inputs, const std::vector<int>& batch_labels,
                              int iteration, int attempt,
                              const std::optional<ActiveAttack>& attack, Adversary* adv) {
        const int b = cfg_.micro_batch;
        const int m = cfg_.micro_count();
        if (batch_inputs.rows() != cfg_.batch_size ||
            batch_labels.size() != static_cast<size_t>(cfg_.batch_size)) {
            throw ShapeError("batch must have batch_size rows and labels");
        }
        AttemptResult res;
        std::optional<ActiveAttack> act = attack;
        if (act && !is_active(act->target)) act.reset();  // bypassed stage: attack is a no-op
        if (act &&
            (act->kind == AttackKind::kBackwardGauss || act->kind == AttackKind::kStealthy) &&
            adv == nullptr) {
            throw StructureError("noise-based attacks require the adversary's stream");
        }
        if (act && act->kind == AttackKind::kCrash) res.attack_effective = true;

        mail_.clear();
        server_fwd_.clear();
        server_mirror_.clear();
        const std::vector<int> chain = active_chain();
        const int first = chain.front();
        const int last = chain.back();
        const bool robust = mode_ != PipelineMode::kBaseline;
        const bool central = mode_ == PipelineMode::kRobustCentral;

        for (auto& g : last_grads_) g = StageGrads{};
        for (int i : chain) last_grads_[static_cast<size_t>(i) - 1] = stage(i).zero_grads();
        std::vector<std::vector<ForwardCache>> own_cache(stages_.size() + 1,
                                                         std::vector<ForwardCache>(m));
        std::vector<std::vector<std::optional<ForwardCache>>> dup_cache(
            stages_.size() + 1, std::vector<std::optional<ForwardCache>>(m));
        std::vector<std::optional<Tensor>> row_grads(m);
        double loss_acc = 0.0;

        auto crashed = [&](int i) {
            return act && act->kind == AttackKind::kCrash && i == act->target;
        };
        auto alert = [&](AlertEvent ev) {
            ev.iteration = iteration;
            ev.attempt = attempt;
            PipelineMessage note;
            note.kind = MessageKind::kAlert;
            note.from_stage = ev.raised_by;
            note.to_stage = 0;
            note.iteration = iteration;
            note.micro_index = ev.micro_index;
            note.note = to_string(ev.kind);
            post(std::move(note));
            res.alerts.push_back(std::move(ev));
        };

        // ---- forward: micro-batches in order, stages upstream to downstream
        for (int mu = 0; mu < m; ++mu) {
            for (size_t idx = 0; idx < chain.size(); ++idx) {
                const int i = chain[idx];
                if (crashed(i)) continue;  // dead stage: consumes and emits nothing
                const int p = idx > 0 ? chain[idx - 1] : 0;
                const int pp = idx > 1 ? chain[idx - 2] : 0;

                Tensor input(1, 1);
                if (i == first) {
                    input = batch_inputs.slice_rows(mu * b, (mu + 1) * b);
                } else {
                    auto msg = take(p, i, MessageKind::kFwdAct);
                    if (!msg) {
                        AlertEvent ev;
                        ev.kind = CheckKind::kTimeout;
                        ev.micro_index = mu;
                        ev.raised_by = i;
                        ev.suspects = suspects_timeout(p, cfg_.stages);
                        ev.note = "no forward activation from stage " + std::to_string(p);
                        alert(std::move(ev));
                        return res;
                    }
                    Tensor claim_out = std::move(*msg->payload);
                    if (robust) {
                        Tensor claim_in = msg->aux ? std::move(*msg->aux) : Tensor(1, 1);
                        if (central && p >= 2) {
                            // The server substitutes its own record of what the
                            // sender genuinely received; equivocation about the
                            // input becomes structurally impossible.
                            auto rec = server_fwd_.find({pp, mu});
                            if (rec == server_fwd_.end()) {
                                AlertEvent ev;
                                ev.kind = CheckKind::kTimeout;
                                ev.micro_index = mu;
                                ev.raised_by = 0;
                                ev.suspects = suspects_timeout(pp, cfg_.stages);
                                ev.note = "server has no record of stage " + std::to_string(pp) +
                                          " output";
                                alert(std::move(ev));
                                return res;
                            }
                            claim_in = rec->second;
                        }
                        if (p == i - 1) {  // this stage holds the sender's duplicate
                            ++recomputations_;
                            ForwardCheck fc =
                                verify_forward(dup_of(p), claim_in, claim_out, cfg_.tolerance,
                                               "fwd " + std::to_string(p) + "->" +
                                                   std::to_string(i) + " micro " +
                                                   std::to_string(mu));
                            if (!fc.verdict.match) {
                                AlertEvent ev;
                                ev.kind = CheckKind::kDupBlock;
                                ev.micro_index = mu;
                                ev.raised_by = i;
                                ev.suspects = suspects_forward(i, cfg_.stages, mode_);
                                ev.max_abs_diff = fc.verdict.max_abs_diff;
                                ev.note = fc.verdict.location;
                                alert(std::move(ev));
                                return res;
                            }
                            dup_cache[static_cast<size_t>(i)][mu] = std::move(fc.cache);
                        }
                        if (!central && pp >= 1) {
                            auto jm = take(pp, i, MessageKind::kFwdJump);
                            if (!jm) {
                                AlertEvent ev;
                                ev.kind = CheckKind::kTimeout;
                                ev.micro_index = mu;
                                ev.raised_by = i;
                                ev.suspects = suspects_timeout(pp, cfg_.stages);
                                ev.note = "no jump activation from stage " + std::to_string(pp);
                                alert(std::move(ev));
                                return res;
                            }
                            Verdict v = verify_jump(claim_in, *jm->payload, cfg_.tolerance,
                                                    "jump " + std::to_string(pp) + "->" +
                                                        std::to_string(i) + " micro " +
                                                        std::to_string(mu));
                            if (!v.match) {
                                AlertEvent ev;
                                ev.kind = CheckKind::kJump;
                                ev.micro_index = mu;
                                ev.raised_by = i;
                                ev.suspects = suspects_forward(i, cfg_.stages, mode_);
                                ev.max_abs_diff = v.max_abs_diff;
                                ev.note = v.location;
                                alert(std::move(ev));
                                return res;
                            }
                        }
                    }
                    input = std::move(claim_out);
                }

                // Execute the stage. A stealthy attacker substitutes a fake
                // input and honestly computes on it, so its (input, output)
                // pair is self-consistent.
                Tensor sent_input = input;
                if (act && act->kind == AttackKind::kStealthy && i == act->target) {
                    Tensor fake = adv->noise_like(input);
                    if (!bitwise_equal(fake, input)) res.attack_effective = true;
                    sent_input = std::move(fake);
                }
                ForwardResult fr = stage(i).forward(sent_input);
                own_cache[static_cast<size_t>(i)][mu] = std::move(fr.cache);

                if (i == last) {
                    std::vector<int> micro_labels(batch_labels.begin() + mu * b,
                                                  batch_labels.begin() + (mu + 1) * b);
                    RowLoss rl = softmax_cross_entropy_rows(fr.output, micro_labels);
                    for (double term : rl.row_losses) loss_acc += term;
                    row_grads[mu] = std::move(rl.row_grads);
                    continue;
                }

                const int s = chain[idx + 1];
                const int ss = idx + 2 < chain.size() ? chain[idx + 2] : 0;
                Tensor out_payload = fr.output;
                bool tampered = false;
                if (act && act->kind == AttackKind::kForwardFlip && i == act->target) {
                    out_payload = Adversary::flip(fr.output);
                    if (!bitwise_equal(out_payload, fr.output)) res.attack_effective = true;
                    tampered = true;
                }
                if (act && act->kind == AttackKind::kStealthy && i == act->target) tampered = true;

                if (central) server_fwd_[{i, mu}] = out_payload;

                PipelineMessage fwd;
                fwd.kind = MessageKind::kFwdAct;
                fwd.from_stage = i;
                fwd.to_stage = s;
                fwd.iteration = iteration;
                fwd.micro_index = mu;
                fwd.payload = out_payload;
                if (robust) fwd.aux = sent_input;  // the input this stage claims it consumed
                fwd.tampered = tampered;
                post(std::move(fwd));

                if (robust && !central && ss >= 1) {
                    PipelineMessage jump;
                    jump.kind = MessageKind::kFwdJump;
                    jump.from_stage = i;
                    jump.to_stage = ss;
                    jump.iteration = iteration;
                    jump.micro_index = mu;
                    jump.payload = out_payload;
                    jump.tampered = tampered;
                    post(std::move(jump));
                }
            }
        }

        // ---- backward: micro-batches in order, stages downstream to upstream
        for (int mu = 0; mu < m; ++mu) {
            for (size_t ridx = chain.size(); ridx-- > 0;) {
                const int i = chain[ridx];
                if (crashed(i)) continue;
                const int s = ridx + 1 < chain.size() ? chain[ridx + 1] : 0;
                const int ss = ridx + 2 < chain.size() ? chain[ridx + 2] : 0;

                Tensor g(1, 1);
                if (i == last) {
                    g = std::move(*row_grads[mu]);
                } else {
                    auto msg = take(s, i, MessageKind::kBwdGrad);
                    if (!msg) {
                        AlertEvent ev;
                        ev.kind = CheckKind::kTimeout;
                        ev.backward = true;
                        ev.micro_index = mu;
                        ev.raised_by = i;
                        ev.suspects = suspects_timeout(s, cfg_.stages);
                        ev.note = "no gradient from stage " + std::to_string(s);
                        alert(std::move(ev));
                        return res;
                    }
                    Tensor claim = std::move(*msg->payload);
                    // Mirror check: the next stage up recomputed what our
                    // successor should have sent us; compare claim vs mirror.
                    if (robust && ss >= 1 && ss == s + 1) {
                        std::optional<Tensor> expected;
                        if (central) {
                            auto rec = server_mirror_.find({i, mu});
                            if (rec != server_mirror_.end()) expected = rec->second;
                        } else {
                            auto jm = take(ss, i, MessageKind::kBwdJump);
                            if (jm) expected = std::move(*jm->payload);
                        }
                        if (!expected) {
                            AlertEvent ev;
                            ev.kind = CheckKind::kTimeout;
                            ev.backward = true;
                            ev.micro_index = mu;
                            ev.raised_by = central ? 0 : i;
                            ev.suspects = suspects_timeout(ss, cfg_.stages);
                            ev.note = "no mirrored gradient from stage " + std::to_string(ss);
                            alert(std::move(ev));
                            return res;
                        }
                        Verdict v = compare_tensors(claim, *expected, cfg_.tolerance,
                                                    "bwd " + std::to_string(s) + "->" +
                                                        std::to_string(i) + " micro " +
                                                        std::to_string(mu));
                        if (!v.match) {
                            AlertEvent ev;
                            ev.kind = CheckKind::kBackwardMirror;
                            ev.backward = true;
                            ev.micro_index = mu;
                            ev.raised_by = central ? 0 : i;
                            ev.suspects = suspects_backward(i, cfg_.stages, mode_);
                            ev.max_abs_diff = v.max_abs_diff;
                            ev.note = v.location;
                            alert(std::move(ev));
                            return res;
                        }
                    }
                    g = std::move(claim);
                }

                StageGrads& acc = last_grads_[static_cast<size_t>(i) - 1];
                Tensor g_in = stage(i).backward(own_cache[static_cast<size_t>(i)][mu], g, acc);

                if (i == first) continue;
                const int p = chain[ridx - 1];
                const int pp = ridx >= 2 ? chain[ridx - 2] : 0;

                Tensor claim_payload = g_in;
                bool tampered = false;
                if (act && act->kind == AttackKind::kBackwardGauss && i == act->target) {
                    claim_payload = adv->noise_like(g_in);
                    if (!bitwise_equal(claim_payload, g_in)) res.attack_effective = true;
                    tampered = true;
                }

                PipelineMessage bwd;
                bwd.kind = MessageKind::kBwdGrad;
                bwd.from_stage = i;
                bwd.to_stage = p;
                bwd.iteration = iteration;
                bwd.micro_index = mu;
                bwd.payload = claim_payload;
                if (robust) bwd.aux = g;  // the gradient this stage claims it consumed
                bwd.tampered = tampered;
                post(std::move(bwd));

                // Ship the mirror for the edge below: we hold p's duplicate
                // and know exactly what we just handed p, so we can recompute
                // what an honest p must send to pp.
                if (robust && p == i - 1 && pp >= 1 &&
                    dup_cache[static_cast<size_t>(i)][mu].has_value()) {
                    Tensor mirror_payload(1, 1);
                    bool mirror_tampered = false;
                    if (act && act->kind == AttackKind::kBackwardGauss && i == act->target) {
                        mirror_payload = adv->noise(b, dup_of(p).in_width());
                        res.attack_effective = true;
                        mirror_tampered = true;
                    } else {
                        ++recomputations_;
                        mirror_payload = mirror_expected(
                            dup_of(p), *dup_cache[static_cast<size_t>(i)][mu], claim_payload);
                    }
                    PipelineMessage mirror;
                    mirror.kind = MessageKind::kBwdJump;
                    mirror.from_stage = i;
                    mirror.to_stage = central ? 0 : pp;
                    mirror.iteration = iteration;
                    mirror.micro_index = mu;
                    mirror.payload = mirror_payload;
                    mirror.tampered = mirror_tampered;
                    if (central) server_mirror_[{pp, mu}] = std::move(mirror_payload);
                    post(std::move(mirror));
                }
            }
        }

        res.completed = true;
        res.loss = loss_acc / cfg_.batch_size;
        return res;
    }

    // Applies the accumulated gradients of the last completed attempt (scale
    // lr/B — losses are summed per row, never pre-averaged, so micro-batching
    // cannot perturb a single bit) and pushes parameter blobs to duplicates.
    void commit_update(double lr) {
        const double scale = lr / cfg_.batch_size;
        for (int i : active_chain()) {
            if (frozen_owners_.count(i)) continue;
            stage(i).apply_update(last_grads_[static_cast<size_t>(i) - 1], scale);
        }
        for (int i = 1; i < cfg_.stages; ++i) {
            if (!is_active(i) || !is_active(i + 1)) continue;
            if (frozen_owners_.count(i)) continue;
            PipelineMessage sync;
            sync.kind = MessageKind::kParamSync;
            sync.from_stage = i;
            sync.to_stage = i + 1;
            sync.blob = stage(i).snapshot_params();
            dup_of(i).load_params(sync.blob);
            post(std::move(sync));
        }
    }

    // Loss of a clean forward pass at current parameters; no messages, no
    // counters — a pure measurement.
    double eval_loss(const Tensor& inputs, const std::vector<int>& labels) const {
        Tensor x = inputs;
        for (int i : active_chain()) x = stage(i).forward(x).output;
        RowLoss rl = softmax_cross_entropy_rows(x, labels);
        double acc = 0.0;
        for (double term : rl.row_losses) acc += term;
        return acc / inputs.rows();
    }

    void count_control(const std::string& note) {
        PipelineMessage ctl;
        ctl.kind = MessageKind::kControl;
        ctl.from_stage = 0;
        ctl.to_stage = 0;
        ctl.note = note;
        post(std::move(ctl));
    }

private:
    void post(PipelineMessage msg) {
        ++message_counts_[to_string(msg.kind)];
        if (trace_) trace_(msg);
        mail_[{msg.from_stage, msg.to_stage, static_cast<int>(msg.kind)}].push_back(
            std::move(msg));
    }

    std::optional<PipelineMessage> take(int from, int to, MessageKind kind) {
        auto it = mail_.find({from, to, static_cast<int>(kind)});
        if (it == mail_.end() || it->second.empty()) return std::nullopt;
        PipelineMessage msg = std::move(it->second.front());
        it->second.pop_front();
        return msg;
    }

    PipelineConfig cfg_;
    PipelineMode mode_;
    std::vector<StageModule> stages_;
    std::vector<StageModule> dups_;
    std::vector<StageGrads> last_grads_;
    std::optional<std::pair<int, int>> skip_;
    std::set<int> frozen_owners_;      // own module frozen (stage before the pair)
    std::set<int> frozen_dup_owners_;  // duplicate frozen (second of the pair, held one later)

    std::map<std::tuple<int, int, int>, std::deque<PipelineMessage>> mail_;
    std::map<std::pair<int, int>, Tensor> server_fwd_;     // (stage, micro) -> recorded output
    std::map<std::pair<int, int>, Tensor> server_mirror_;  // (receiver, micro) -> expected grad
    std::map<std::string, long long> message_counts_;
    long long recomputations_ = 0;
    std::function<void(const PipelineMessage&)> trace_;
};

// Full training driver: per-iteration adversary consultation, the GPipe
// attempt, and the recovery ladder. Direct phase: restart the iteration on
// the same batch; R failed attempts in one iteration or alerts at R distinct
// iterations escalate to central routing. Central phase: the next alert
// localizes a pair and installs the skip bypass. After that, restarts are the
// only remedy left; exceeding the cap aborts the run with partial metrics.
inline RunMetrics run_training(Pipeline& pipe, const Dataset& data, Adversary& adv) {
    const PipelineConfig& cfg = pipe.config();
    const auto t0 = std::chrono::steady_clock::now();
    RunMetrics m;
    m.task = data.task;

    auto finalize = [&]() {
        m.final_mode = to_string(pipe.mode());
        m.messages = pipe.message_counts();
        m.recomputations = pipe.recomputations();
        m.wall_time_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    auto abort_run = [&](const std::string& why) {
        m.aborted = true;
        m.abort_reason = why;
        finalize();
        throw AbortedRunError(why, std::move(m));
    };

    {
        Batch b0 = batch_for_iteration(data, 0, cfg.batch_size);
        m.initial_loss = pipe.eval_loss(b0.inputs, b0.labels);
    }

    std::set<int> direct_alert_iterations;
    for (int it = 0; it < cfg.iterations; ++it) {
        Batch batch = batch_for_iteration(data, it, cfg.batch_size);
        int attempt = 0;
        int attempts_in_phase = 0;
        int alerts_this_iteration = 0;
        bool attacked = false;
        for (;;) {
            std::optional<ActiveAttack> plan = adv.begin_attempt(it, attempt);
            AttemptResult r =
                pipe.run_attempt(batch.inputs, batch.labels, it, attempt, plan, &adv);
            attacked = attacked || r.attack_effective;
            if (r.completed) {
                pipe.commit_update(cfg.lr);
                m.loss.push_back(r.loss);
                m.alerts_per_iteration.push_back(alerts_this_iteration);
                m.mode_per_iteration.push_back(to_string(pipe.mode()));
                break;
            }

            const std::vector<int> first_suspects =
                r.alerts.empty() ? std::vector<int>{} : r.alerts.front().suspects;
            for (AlertEvent& ev : r.alerts) m.alerts.push_back(std::move(ev));
            alerts_this_iteration += static_cast<int>(r.alerts.size());
            ++m.restart_count;
            ++attempt;
            ++attempts_in_phase;
            pipe.count_control("restart iteration " + std::to_string(it));

            switch (pipe.mode()) {
                case PipelineMode::kBaseline:
                    // No escalation ladder without the robust framework; only
                    // liveness faults (timeouts) can land here.
                    if (attempts_in_phase >= cfg.policy.restart_cap) {
                        abort_run("restart cap exceeded at iteration " + std::to_string(it) +
                                  " (baseline restart policy)");
                    }
                    break;
                case PipelineMode::kRobustDirect:
                    direct_alert_iterations.insert(it);
                    if (attempts_in_phase >= cfg.policy.restart_cap) {
                        if (!cfg.policy.escalation) {
                            abort_run("restart cap exceeded at iteration " + std::to_string(it) +
                                      " with escalation disabled");
                        }
                        pipe.escalate_to_central();
                        pipe.count_control("escalate to central routing");
                        if (m.escalation_iteration < 0) m.escalation_iteration = it;
                        attempts_in_phase = 0;
                    }
                    break;
                case PipelineMode::kRobustCentral:
                    if (!pipe.skip_installed()) {
                        const auto pair = skip_pair_from_suspects(first_suspects, cfg.stages);
                        pipe.install_skip(pair);
                        pipe.count_control("install skip {" + std::to_string(pair.first) + "," +
                                           std::to_string(pair.second) + "}");
                        m.skip_events.push_back(SkipEvent{it, pair.first, pair.second});
                        attempts_in_phase = 0;
                    } else if (attempts_in_phase >= cfg.policy.restart_cap) {
                        abort_run("restart cap exceeded at iteration " + std::to_string(it) +
                                  " after skip installation");
                    }
                    break;
            }
        }
        if (attacked) m.attacked_iterations.push_back(it);
        if (pipe.mode() == PipelineMode::kRobustDirect && cfg.policy.escalation &&
            static_cast<int>(direct_alert_iterations.size()) >= cfg.policy.restart_cap) {
            pipe.escalate_to_central();
            pipe.count_control("escalate to central routing");
            if (m.escalation_iteration < 0) m.escalation_iteration = it + 1;
        }
    }
    finalize();
    return m;
}

}  // namespace pipesentry
