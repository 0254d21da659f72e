#include "facecap/maskrefine/maskrefine.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

namespace facecap {

GridEnergy build_energy(const ProbabilityMap& prob, const GrayImage& intensity, double lambda,
                        double sigma, bool eight_connected) {
    if (!prob.same_size(intensity)) throw std::invalid_argument("build_energy: dimension mismatch");
    if (prob.width <= 0 || prob.height <= 0) throw std::invalid_argument("build_energy: empty grid");
    if (lambda < 0) throw std::invalid_argument("build_energy: lambda must be >= 0");
    if (sigma <= 0) throw std::invalid_argument("build_energy: sigma must be positive");

    const int w = prob.width, h = prob.height;
    GridEnergy e;
    e.width = w;
    e.height = h;
    e.lambda = lambda;
    e.sigma = sigma;
    e.eight_connected = eight_connected;
    e.face_cost.resize(prob.size());
    e.nonface_cost.resize(prob.size());
    e.w_right.assign(prob.size(), 0.0);
    e.w_down.assign(prob.size(), 0.0);
    if (eight_connected) {
        e.w_down_right.assign(prob.size(), 0.0);
        e.w_down_left.assign(prob.size(), 0.0);
    }

    const auto pair_weight = [&](float a, float b) {
        const double d = static_cast<double>(a) - static_cast<double>(b);
        return std::exp(-(d * d) / (2.0 * sigma));
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const size_t i = e.idx(x, y);
            const double p =
                std::clamp(static_cast<double>(prob.at(x, y)), kProbabilityClamp, 1.0 - kProbabilityClamp);
            e.face_cost[i] = -std::log(p);
            e.nonface_cost[i] = -std::log(1.0 - p);
            if (x + 1 < w) e.w_right[i] = pair_weight(intensity.at(x, y), intensity.at(x + 1, y));
            if (y + 1 < h) e.w_down[i] = pair_weight(intensity.at(x, y), intensity.at(x, y + 1));
            if (eight_connected) {
                if (x + 1 < w && y + 1 < h) {
                    e.w_down_right[i] = pair_weight(intensity.at(x, y), intensity.at(x + 1, y + 1));
                }
                if (x > 0 && y + 1 < h) {
                    e.w_down_left[i] = pair_weight(intensity.at(x, y), intensity.at(x - 1, y + 1));
                }
            }
        }
    }
    return e;
}

double energy_of(const BinaryMask& labeling, const GridEnergy& e) {
    if (labeling.width != e.width || labeling.height != e.height) {
        throw std::invalid_argument("energy_of: dimension mismatch");
    }
    double total = 0;
    for (int y = 0; y < e.height; ++y) {
        for (int x = 0; x < e.width; ++x) {
            const size_t i = e.idx(x, y);
            const bool face = labeling.at(x, y) != 0;
            total += face ? e.face_cost[i] : e.nonface_cost[i];
            if (x + 1 < e.width && face != (labeling.at(x + 1, y) != 0)) {
                total += e.lambda * e.w_right[i];
            }
            if (y + 1 < e.height && face != (labeling.at(x, y + 1) != 0)) {
                total += e.lambda * e.w_down[i];
            }
            if (e.eight_connected) {
                if (x + 1 < e.width && y + 1 < e.height && face != (labeling.at(x + 1, y + 1) != 0)) {
                    total += e.lambda * e.w_down_right[i];
                }
                if (x > 0 && y + 1 < e.height && face != (labeling.at(x - 1, y + 1) != 0)) {
                    total += e.lambda * e.w_down_left[i];
                }
            }
        }
    }
    return total;
}

namespace {

// Boykov-Kolmogorov augmenting-path max-flow on the pixel grid. Nodes carry a
// signed terminal residual (positive: from source) and per-direction neighbor
// residuals. Face = sink side; ties fall to face because the source set is
// the minimal cut side (exactly the residual-reachable nodes).
class GridBK {
public:
    GridBK(int w, int h, bool eight)
        : w_(w), h_(h), ndirs_(eight ? 8 : 4), n_(static_cast<size_t>(w) * h) {
        tcap_.assign(n_, 0.0);
        ncap_.assign(n_ * ndirs_, 0.0);
        tree_.assign(n_, FREE);
        parent_.assign(n_, NONE);
        in_active_.assign(n_, 0);
    }

    // Directions arranged so rev(d) == d ^ 1.
    static constexpr int DX[8] = {1, -1, 0, 0, 1, -1, 1, -1};
    static constexpr int DY[8] = {0, 0, 1, -1, 1, -1, -1, 1};

    double& tcap(size_t i) { return tcap_[i]; }
    double& ncap(size_t i, int d) { return ncap_[i * ndirs_ + d]; }

    void solve();
    bool face_side(size_t i) const { return tree_[i] != SOURCE; }

private:
    static constexpr double EPS = 1e-12;
    enum Tree : uint8_t { FREE = 0, SOURCE = 1, SINK = 2 };
    static constexpr int NONE = -1, TERMINAL = -2;

    int neighbor(int i, int d) const {
        const int x = i % w_ + DX[d];
        const int y = i / w_ + DY[d];
        if (x < 0 || x >= w_ || y < 0 || y >= h_) return -1;
        return y * w_ + x;
    }

    void set_active(int i) {
        if (!in_active_[i]) {
            in_active_[i] = 1;
            active_.push_back(i);
        }
    }

    bool has_root(int i) const {
        while (true) {
            if (parent_[i] == TERMINAL) return true;
            if (parent_[i] == NONE) return false;
            i = neighbor(i, parent_[i]);
        }
    }

    void augment(int src_node, int snk_node, int dir);
    void process_orphans();

    int w_, h_, ndirs_;
    size_t n_;
    std::vector<double> tcap_, ncap_;
    std::vector<Tree> tree_;
    std::vector<int> parent_; // direction toward parent, or NONE/TERMINAL
    std::vector<uint8_t> in_active_;
    std::deque<int> active_;
    std::deque<int> orphans_;
};

void GridBK::solve() {
    for (size_t i = 0; i < n_; ++i) {
        if (tcap_[i] > EPS) {
            tree_[i] = SOURCE;
            parent_[i] = TERMINAL;
            set_active(static_cast<int>(i));
        } else if (tcap_[i] < -EPS) {
            tree_[i] = SINK;
            parent_[i] = TERMINAL;
            set_active(static_cast<int>(i));
        }
    }

    while (!active_.empty()) {
        const int p = active_.front();
        active_.pop_front();
        in_active_[p] = 0;
        if (tree_[p] == FREE) continue;

        bool rescan = false;
        for (int d = 0; d < ndirs_; ++d) {
            const int q = neighbor(p, d);
            if (q < 0) continue;
            // Residual toward q in this tree's growth direction.
            const double res = tree_[p] == SOURCE ? ncap(p, d) : ncap(q, d ^ 1);
            if (res <= EPS) continue;
            if (tree_[q] == FREE) {
                tree_[q] = tree_[p];
                parent_[q] = d ^ 1;
                set_active(q);
            } else if (tree_[q] != tree_[p]) {
                if (tree_[p] == SOURCE) {
                    augment(p, q, d);
                } else {
                    augment(q, p, d ^ 1);
                }
                process_orphans();
                rescan = true;
                break;
            }
        }
        if (rescan) set_active(p);
    }
}

void GridBK::augment(int src_node, int snk_node, int dir) {
    // Bottleneck over: source-tree chain, the bridging edge, sink-tree chain.
    // Roots are located now, before saturation breaks any parent pointer.
    double bn = ncap(src_node, dir);
    int src_root = src_node;
    while (parent_[src_root] != TERMINAL) {
        const int j = neighbor(src_root, parent_[src_root]);
        bn = std::min(bn, ncap(j, parent_[src_root] ^ 1));
        src_root = j;
    }
    bn = std::min(bn, tcap_[src_root]);
    int snk_root = snk_node;
    while (parent_[snk_root] != TERMINAL) {
        bn = std::min(bn, ncap(snk_root, parent_[snk_root]));
        snk_root = neighbor(snk_root, parent_[snk_root]);
    }
    bn = std::min(bn, -tcap_[snk_root]);

    // Push and collect orphans at saturated parent edges.
    ncap(src_node, dir) -= bn;
    ncap(snk_node, dir ^ 1) += bn;
    for (int i = src_node; parent_[i] != TERMINAL;) {
        const int j = neighbor(i, parent_[i]);
        ncap(j, parent_[i] ^ 1) -= bn;
        ncap(i, parent_[i]) += bn;
        if (ncap(j, parent_[i] ^ 1) <= EPS) {
            parent_[i] = NONE;
            orphans_.push_back(i);
        }
        i = j;
    }
    tcap_[src_root] -= bn;
    if (tcap_[src_root] <= EPS && parent_[src_root] == TERMINAL) {
        parent_[src_root] = NONE;
        orphans_.push_back(src_root);
    }
    for (int i = snk_node; parent_[i] != TERMINAL;) {
        const int j = neighbor(i, parent_[i]);
        ncap(i, parent_[i]) -= bn;
        ncap(j, parent_[i] ^ 1) += bn;
        if (ncap(i, parent_[i]) <= EPS) {
            parent_[i] = NONE;
            orphans_.push_back(i);
        }
        i = j;
    }
    tcap_[snk_root] += bn;
    if (tcap_[snk_root] >= -EPS && parent_[snk_root] == TERMINAL) {
        parent_[snk_root] = NONE;
        orphans_.push_back(snk_root);
    }
}

void GridBK::process_orphans() {
    while (!orphans_.empty()) {
        const int i = orphans_.front();
        orphans_.pop_front();
        const Tree t = tree_[i];
        if (t == FREE) continue;

        // A new parent must sit in the same tree, offer residual capacity in
        // the tree's flow direction, and trace back to a terminal.
        int found = NONE;
        for (int d = 0; d < ndirs_; ++d) {
            const int q = neighbor(i, d);
            if (q < 0 || tree_[q] != t) continue;
            const double res = t == SOURCE ? ncap(q, d ^ 1) : ncap(i, d);
            if (res <= EPS) continue;
            if (!has_root(q)) continue;
            found = d;
            break;
        }
        if (found != NONE) {
            parent_[i] = found;
            continue;
        }

        // No parent: free the node, orphan its children, reactivate potential
        // future parents.
        for (int d = 0; d < ndirs_; ++d) {
            const int q = neighbor(i, d);
            if (q < 0 || tree_[q] != t) continue;
            const double res = t == SOURCE ? ncap(q, d ^ 1) : ncap(i, d);
            if (res > EPS) set_active(q);
            if (parent_[q] == (d ^ 1)) {
                parent_[q] = NONE;
                orphans_.push_back(q);
            }
        }
        tree_[i] = FREE;
        parent_[i] = NONE;
    }
}

} // namespace

BinaryMask min_cut(const GridEnergy& e) {
    GridBK bk(e.width, e.height, e.eight_connected);
    for (int y = 0; y < e.height; ++y) {
        for (int x = 0; x < e.width; ++x) {
            const size_t i = e.idx(x, y);
            // cap(s->i) = theta_i(face) is paid when i lands on the sink
            // (face) side; cap(i->t) = theta_i(nonface) when on the source
            // side. Only the difference matters for the cut argmin.
            bk.tcap(i) = e.face_cost[i] - e.nonface_cost[i];
            const auto connect = [&](int d, double w) {
                const double c = e.lambda * w;
                bk.ncap(i, d) += c;
                const int nx = x + GridBK::DX[d], ny = y + GridBK::DY[d];
                bk.ncap(e.idx(nx, ny), d ^ 1) += c;
            };
            if (x + 1 < e.width && e.w_right[i] > 0) connect(0, e.w_right[i]);
            if (y + 1 < e.height && e.w_down[i] > 0) connect(2, e.w_down[i]);
            if (e.eight_connected) {
                if (x + 1 < e.width && y + 1 < e.height && e.w_down_right[i] > 0) {
                    connect(4, e.w_down_right[i]);
                }
                if (x > 0 && y + 1 < e.height && e.w_down_left[i] > 0) {
                    connect(7, e.w_down_left[i]);
                }
            }
        }
    }
    bk.solve();
    BinaryMask mask(e.width, e.height);
    for (int y = 0; y < e.height; ++y) {
        for (int x = 0; x < e.width; ++x) {
            mask.at(x, y) = bk.face_side(e.idx(x, y)) ? 1 : 0;
        }
    }
    return mask;
}

BinaryMask upsample_mask(const BinaryMask& mask, int target_w, int target_h) {
    if (target_w < mask.width || target_h < mask.height) {
        throw std::invalid_argument("upsample_mask: target smaller than source");
    }
    if (target_w == mask.width && target_h == mask.height) return mask;
    GrayImage field(mask.width, mask.height);
    for (size_t i = 0; i < mask.data.size(); ++i) field.data[i] = mask.data[i] ? 1.0f : 0.0f;
    const GrayImage up = resize_bilinear(field, target_w, target_h);
    BinaryMask out(target_w, target_h);
    for (size_t i = 0; i < up.data.size(); ++i) out.data[i] = up.data[i] >= 0.5f ? 1 : 0;
    return out;
}

BinaryMask refine_mask(const ProbabilityMap& prob, const GrayImage& intensity, double lambda,
                       double sigma, bool eight_connected) {
    return min_cut(build_energy(prob, intensity, lambda, sigma, eight_connected));
}

} // namespace facecap
