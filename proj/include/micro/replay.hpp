#pragma once

// Training-time transition storage: the immutable offline dataset plus a
// bounded ring of model-generated rollout transitions, with per-element
// mixed sampling between the two pools.

#include <vector>

#include "micro/dataset.hpp"
#include "micro/rng.hpp"
#include "micro/tensor.hpp"

namespace micro {

/// A sampled minibatch in tensor form. src_model flags model-pool rows with
/// 1.0 so downstream losses can apply the model-data-only penalty; done
/// flags terminal rows with 1.0.
struct Batch {
    Tensor s, a, r, s2, done, src_model;
    size_t size() const { return s.rows; }
};

class MixedBuffer {
  public:
    MixedBuffer(std::vector<Transition> offline, size_t obs_dim, size_t act_dim,
                size_t model_capacity)
        : offline_(std::move(offline)),
          obs_dim_(obs_dim),
          act_dim_(act_dim),
          capacity_(model_capacity) {
        require_arg(!offline_.empty(), "MixedBuffer: offline pool must not be empty");
        require_arg(capacity_ > 0, "MixedBuffer: model capacity must be positive");
        for (const Transition& t : offline_) check_dims(t);
    }

    size_t offline_size() const { return offline_.size(); }
    size_t model_size() const { return model_.size(); }
    size_t model_capacity() const { return capacity_; }

    /// Append a model transition, evicting the oldest once full.
    void push_model(Transition t) {
        check_dims(t);
        t.src = Source::Model;
        if (model_.size() < capacity_) {
            model_.push_back(std::move(t));
        } else {
            model_[write_] = std::move(t);
        }
        write_ = (write_ + 1) % capacity_;
    }

    const Transition& offline_row(size_t i) const { return offline_[i]; }
    const Transition& model_row(size_t i) const { return model_[i]; }

    /// The model pool in storage order plus the ring's write cursor, for
    /// checkpointing a training run.
    const std::vector<Transition>& model_rows() const { return model_; }
    size_t write_cursor() const { return write_; }

    /// Reinstate a checkpointed model pool.
    void restore_model(std::vector<Transition> rows, size_t write) {
        require_arg(rows.size() <= capacity_, "MixedBuffer::restore_model: pool exceeds capacity");
        require_arg(write < capacity_, "MixedBuffer::restore_model: cursor out of range");
        for (Transition& t : rows) {
            check_dims(t);
            t.src = Source::Model;
        }
        model_ = std::move(rows);
        write_ = write;
    }

    /// Per-element mixed sampling: each batch slot independently comes from
    /// the model pool with probability model_fraction (falling back to the
    /// offline pool while the model pool is still empty). Two RNG draws per
    /// slot, always, so the stream position is data-independent. sample and
    /// sample_rows pick identical rows from identical rng states.
    Batch sample(size_t batch, double model_fraction, Rng& rng) const {
        Batch b;
        b.s = Tensor(batch, obs_dim_);
        b.a = Tensor(batch, act_dim_);
        b.r = Tensor(batch, 1);
        b.s2 = Tensor(batch, obs_dim_);
        b.done = Tensor(batch, 1);
        b.src_model = Tensor(batch, 1);
        const std::vector<Transition> rows = sample_rows(batch, model_fraction, rng);
        for (size_t i = 0; i < batch; ++i) {
            const Transition& t = rows[i];
            for (size_t j = 0; j < obs_dim_; ++j) b.s.at(i, j) = t.s[j];
            for (size_t j = 0; j < act_dim_; ++j) b.a.at(i, j) = t.a[j];
            b.r.at(i, 0) = t.r;
            for (size_t j = 0; j < obs_dim_; ++j) b.s2.at(i, j) = t.s2[j];
            b.done.at(i, 0) = t.done ? 1.0 : 0.0;
            b.src_model.at(i, 0) = t.src == Source::Model ? 1.0 : 0.0;
        }
        return b;
    }

    /// Row form of sample() for consumers that need the full transitions.
    std::vector<Transition> sample_rows(size_t batch, double model_fraction, Rng& rng) const {
        require_arg(batch > 0, "MixedBuffer::sample: batch must be positive");
        require_arg(model_fraction >= 0.0 && model_fraction <= 1.0,
                    "MixedBuffer::sample: model_fraction outside [0,1]");
        std::vector<Transition> rows;
        rows.reserve(batch);
        for (size_t i = 0; i < batch; ++i) {
            const double u = rng.uniform();
            const uint64_t raw = rng.raw64();
            const bool from_model = u < model_fraction && !model_.empty();
            rows.push_back(from_model ? model_[raw % model_.size()]
                                      : offline_[raw % offline_.size()]);
        }
        return rows;
    }

  private:
    void check_dims(const Transition& t) const {
        require_arg(t.s.size() == obs_dim_ && t.s2.size() == obs_dim_ && t.a.size() == act_dim_,
                    "MixedBuffer: transition dimensions disagree");
    }

    std::vector<Transition> offline_;
    std::vector<Transition> model_;
    size_t obs_dim_, act_dim_;
    size_t capacity_;
    size_t write_ = 0;
};

}  // namespace micro
