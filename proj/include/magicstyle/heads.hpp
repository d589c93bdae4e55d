#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "magicstyle/errors.hpp"

namespace magicstyle {

// tokens x channels, row-major so a token is a contiguous row.
using FeatureMap = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// heads x tokens x head_dim, row-major.
template <typename T>
class BasicHeadTensor {
public:
    using Scalar = T;
    using HeadMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    BasicHeadTensor() = default;
    BasicHeadTensor(std::size_t heads, std::size_t tokens, std::size_t head_dim)
        : heads_(heads), tokens_(tokens), head_dim_(head_dim), data_(heads * tokens * head_dim, T{}) {}
    BasicHeadTensor(std::size_t heads, std::size_t tokens, std::size_t head_dim, std::vector<T> data)
        : heads_(heads), tokens_(tokens), head_dim_(head_dim), data_(std::move(data)) {
        if (data_.size() != heads * tokens * head_dim) {
            throw ShapeError("head tensor data size " + std::to_string(data_.size()) + " does not match " +
                             std::to_string(heads) + "x" + std::to_string(tokens) + "x" + std::to_string(head_dim));
        }
    }

    std::size_t heads() const { return heads_; }
    std::size_t tokens() const { return tokens_; }
    std::size_t head_dim() const { return head_dim_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& at(std::size_t h, std::size_t t, std::size_t d) { return data_[(h * tokens_ + t) * head_dim_ + d]; }
    T at(std::size_t h, std::size_t t, std::size_t d) const { return data_[(h * tokens_ + t) * head_dim_ + d]; }

    Eigen::Map<HeadMatrix> head(std::size_t h) {
        return {data_.data() + h * tokens_ * head_dim_, static_cast<Eigen::Index>(tokens_),
                static_cast<Eigen::Index>(head_dim_)};
    }
    Eigen::Map<const HeadMatrix> head(std::size_t h) const {
        return {data_.data() + h * tokens_ * head_dim_, static_cast<Eigen::Index>(tokens_),
                static_cast<Eigen::Index>(head_dim_)};
    }

    const std::vector<T>& values() const { return data_; }
    std::vector<T>& values() { return data_; }

    template <typename U>
    BasicHeadTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicHeadTensor<U>(heads_, tokens_, head_dim_, std::move(out));
    }

    bool same_shape(const BasicHeadTensor& o) const {
        return heads_ == o.heads_ && tokens_ == o.tokens_ && head_dim_ == o.head_dim_;
    }

    std::string shape_string() const {
        return "(" + std::to_string(heads_) + ", " + std::to_string(tokens_) + ", " + std::to_string(head_dim_) + ")";
    }

    friend bool operator==(const BasicHeadTensor&, const BasicHeadTensor&) = default;

private:
    std::size_t heads_ = 0;
    std::size_t tokens_ = 0;
    std::size_t head_dim_ = 0;
    std::vector<T> data_;
};

using HeadTensor = BasicHeadTensor<double>;

struct QKV {
    HeadTensor q;
    HeadTensor k;
    HeadTensor v;
};

inline HeadTensor split_heads(const FeatureMap& x, std::size_t heads) {
    const auto tokens = static_cast<std::size_t>(x.rows());
    const auto inner = static_cast<std::size_t>(x.cols());
    if (heads == 0 || inner % heads != 0) {
        throw ShapeError("inner dim " + std::to_string(inner) + " not divisible by " + std::to_string(heads) +
                         " heads");
    }
    const std::size_t d = inner / heads;
    HeadTensor out(heads, tokens, d);
    for (std::size_t h = 0; h < heads; ++h) {
        out.head(h) = x.middleCols(static_cast<Eigen::Index>(h * d), static_cast<Eigen::Index>(d));
    }
    return out;
}

template <typename T>
FeatureMap merge_heads(const BasicHeadTensor<T>& x) {
    const auto d = static_cast<Eigen::Index>(x.head_dim());
    FeatureMap out(static_cast<Eigen::Index>(x.tokens()), static_cast<Eigen::Index>(x.heads() * x.head_dim()));
    for (std::size_t h = 0; h < x.heads(); ++h) {
        out.middleCols(static_cast<Eigen::Index>(h) * d, d) = x.head(h).template cast<double>();
    }
    return out;
}

// Stacks b after a along the token axis.
template <typename T>
BasicHeadTensor<T> concat_tokens(const BasicHeadTensor<T>& a, const BasicHeadTensor<T>& b) {
    if (a.heads() != b.heads() || a.head_dim() != b.head_dim()) {
        throw ShapeError("cannot concatenate " + a.shape_string() + " with " + b.shape_string());
    }
    BasicHeadTensor<T> out(a.heads(), a.tokens() + b.tokens(), a.head_dim());
    for (std::size_t h = 0; h < a.heads(); ++h) {
        auto dst = out.head(h);
        dst.topRows(static_cast<Eigen::Index>(a.tokens())) = a.head(h);
        dst.bottomRows(static_cast<Eigen::Index>(b.tokens())) = b.head(h);
    }
    return out;
}

}  // namespace magicstyle
