#include "gkd/graphs.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace gkd {

namespace {

std::vector<Scalar> fill_temperatures(std::vector<Scalar> t, Index n, const char* what)
{
    if (t.empty()) t.assign(static_cast<std::size_t>(n), kDefaultTemperature);
    if (static_cast<Index>(t.size()) != n) throw std::invalid_argument(std::string(what) + ": wrong number of temperatures");
    for (Scalar v : t)
        if (!(v > 0.0)) throw std::invalid_argument(std::string(what) + ": temperatures must be positive");
    return t;
}

} // namespace

LogitsGraph::LogitsGraph(Index n_teachers, std::vector<Scalar> temperatures)
    : n_(n_teachers), raw_(Shape{std::max<Index>(n_teachers, 1), std::max<Index>(n_teachers, 1)})
{
    if (n_teachers < 1) throw std::invalid_argument("logits graph needs at least one teacher");
    temperatures_ = fill_temperatures(std::move(temperatures), n_, "logits graph");
    mask_ = BoolMatrix::Constant(n_, n_, true);
    // A lone teacher keeps its self-loop so that the graph is not empty.
    if (n_ > 1) mask_.diagonal().setConstant(false);
}

void LogitsGraph::set_edge(Index sender, Index receiver, bool present)
{
    if (sender < 0 || receiver < 0 || sender >= n_ || receiver >= n_) throw std::out_of_range("edge index out of range");
    mask_(receiver, sender) = present;
}

RowMatrix LogitsGraph::incoming_weights() const { return masked_softmax_rows(raw_.matrix(n_, n_), mask_); }

Index LogitsGraph::receiving_vertices() const { return (mask_.rowwise().count().array() > 0).count(); }

RowMatrix masked_softmax_rows(const Eigen::Ref<const RowMatrix>& raw, const BoolMatrix& mask)
{
    if (raw.rows() != mask.rows() || raw.cols() != mask.cols()) throw std::invalid_argument("mask shape mismatch");
    RowMatrix w = RowMatrix::Zero(raw.rows(), raw.cols());
    for (Index m = 0; m < raw.rows(); ++m) {
        Scalar mx = -std::numeric_limits<Scalar>::infinity();
        for (Index n = 0; n < raw.cols(); ++n)
            if (mask(m, n)) mx = std::max(mx, raw(m, n));
        if (!std::isfinite(mx)) continue;
        Scalar total = 0.0;
        for (Index n = 0; n < raw.cols(); ++n)
            if (mask(m, n)) total += (w(m, n) = std::exp(raw(m, n) - mx));
        w.row(m) /= total;
    }
    return w;
}

Var masked_softmax_rows(Var raw, const BoolMatrix& mask)
{
    const Index r = mask.rows(), c = mask.cols();
    if (raw.size() != r * c) throw std::invalid_argument("masked softmax: parameter shape mismatch");
    Tensor out({r, c});
    out.matrix(r, c) = masked_softmax_rows(raw.value().matrix(r, c), mask);
    return raw.tape()->record(std::move(out), {raw}, [r, c](const GradContext& ctx) {
        auto y = ctx.out.matrix(r, c);
        Eigen::Map<const RowMatrix> g(ctx.out_grad.data(), r, c);
        Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
        // Masked entries have y = 0 and receive no gradient.
        Eigen::Map<RowMatrix>(ctx.input_grads[0]->data(), r, c) += (y.array() * (g.colwise() - dots).array()).matrix();
    }, "masked_softmax");
}

Var logits_graph_loss(Var student_logits, std::span<const RowMatrix> teacher_logits, const LogitsGraph& graph, Var raw_params)
{
    const Index nt = graph.size();
    if (static_cast<Index>(teacher_logits.size()) != nt) throw std::invalid_argument("logits graph: teacher count mismatch");
    const Index c = student_logits.shape().back();
    const Index n = student_logits.size() / c;
    if (graph.receiving_vertices() == 0) throw std::invalid_argument("logits graph has no edges");
    Tape& tape = *student_logits.tape();
    const Scalar step = normalized_class_step(c);

    Var eta = softmax_rows(student_logits, 1.0);
    std::vector<Var> per_teacher;
    for (Index t = 0; t < nt; ++t) {
        const RowMatrix& tl = teacher_logits[static_cast<std::size_t>(t)];
        if (tl.rows() != n || tl.cols() != c) throw std::invalid_argument("logits graph: teacher logits length mismatch");
        const RowMatrix mu = softmax_rows(tl, graph.temperatures()[static_cast<std::size_t>(t)]);
        per_teacher.push_back(reshape(em_distance_rows(eta, mu, step), {n, 1}));
    }
    Var edge_losses = concat_cols(per_teacher);  // [N, n_t], column = sender

    Var w = masked_softmax_rows(raw_params, graph.mask());
    const Scalar inv_u = 1.0 / static_cast<Scalar>(graph.receiving_vertices());
    Var ones = tape.constant(Tensor::filled({1, nt}, inv_u));
    Var sender_weight = transpose(matmul(ones, w));  // [n_t, 1]
    return matmul(edge_losses, sender_weight);
}

Scalar logits_graph_loss(const Vector& student_logits, std::span<const Vector> teacher_logits, const LogitsGraph& graph)
{
    Tape tape;
    Var s = tape.constant(Tensor({1, student_logits.size()}, student_logits));
    std::vector<RowMatrix> t;
    for (const Vector& v : teacher_logits) t.emplace_back(v.transpose());
    Var raw = tape.constant(graph.raw_params());
    return logits_graph_loss(s, t, graph, raw).value()[0];
}

Vector logits_edge_losses(const Vector& student_logits, std::span<const Vector> teacher_logits, const LogitsGraph& graph)
{
    const Vector eta = softmax(student_logits);
    const Scalar step = normalized_class_step(student_logits.size());
    Vector out(static_cast<Index>(teacher_logits.size()));
    for (std::size_t t = 0; t < teacher_logits.size(); ++t)
        out[static_cast<Index>(t)] = em_distance_1d(softmax(teacher_logits[t], graph.temperatures()[t]), eta, step);
    return out;
}

ReprGraph::ReprGraph(Index n_teachers, Index vertex_channels, std::vector<Scalar> temperatures, Index edge_dims)
    : n_teachers_(n_teachers), k_(n_teachers * (n_teachers - 1) / 2), channels_(vertex_channels), b_(edge_dims)
{
    if (n_teachers < 2) throw std::invalid_argument("representation graph needs at least two teachers");
    if (vertex_channels < 1) throw std::invalid_argument("representation graph needs a positive channel count");
    if (edge_dims < 1) throw std::invalid_argument("edge dimension must be positive");
    raw_ = Tensor({b_, k_});
    temperatures_ = fill_temperatures(std::move(temperatures), k_, "representation graph");
}

namespace {

Tensor inverse_temperatures(const ReprGraph& g)
{
    Tensor t({g.edge_dims(), g.vertices()});
    for (Index d = 0; d < g.edge_dims(); ++d)
        for (Index k = 0; k < g.vertices(); ++k) t[d * g.vertices() + k] = 1.0 / g.temperatures()[static_cast<std::size_t>(k)];
    return t;
}

} // namespace

Vector ReprGraph::weights() const
{
    RowMatrix scaled = raw_.matrix(b_, k_).array() * inverse_temperatures(*this).matrix(b_, k_).array();
    return softmax_rows(scaled).colwise().mean().transpose();
}

Tensor soften_vertices(std::span<const BilinearVertex> vertices, const ReprGraph& graph)
{
    const Index k = graph.vertices();
    if (static_cast<Index>(vertices.size()) != k) throw std::invalid_argument("vertex count does not match the representation graph");
    const Index ck = graph.vertex_channels();
    const Index e = vertices.front().v.size();
    if (e % ck != 0)
        throw std::invalid_argument("vertex length " + std::to_string(e) + " cannot be reshaped into " + std::to_string(ck) + " channels");
    const Index s = e / ck;
    Tensor out({k, ck, s});
    for (Index v = 0; v < k; ++v) {
        const Vector& vk = vertices[static_cast<std::size_t>(v)].v;
        if (vk.size() != e) throw std::invalid_argument("vertices have different lengths");
        out.data().segment(v * e, e) =
            Eigen::Map<const Vector>(softmax_rows(Eigen::Map<const RowMatrix>(vk.data(), ck, s),
                                                  graph.temperatures()[static_cast<std::size_t>(v)])
                                         .data(),
                                     e);
    }
    return out;
}

Var repr_graph_loss(Var student_channels, const Tensor& softened, const ReprGraph& graph, Var raw_params, Scalar bandwidth)
{
    if (softened.rank() != 4 || softened.dim(1) != graph.vertices())
        throw std::invalid_argument("repr graph: softened vertices must be [N, K, C_k, S]");
    Tape& tape = *student_channels.tape();
    Var per_vertex = mmd_gaussian(student_channels, softened, bandwidth);  // [N, K]

    const Index b = graph.edge_dims(), k = graph.vertices();
    Var scaled = mul(reshape(raw_params, {b, k}), tape.constant(inverse_temperatures(graph)));
    Var w = softmax_rows(scaled, 1.0);                                   // [b, K]
    Var avg = tape.constant(Tensor::filled({1, b}, 1.0 / static_cast<Scalar>(b)));
    Var vertex_weight = transpose(matmul(avg, w));                       // [K, 1]
    return matmul(per_vertex, vertex_weight);
}

Scalar repr_graph_loss(const RowMatrix& student_channels, std::span<const BilinearVertex> vertices, const ReprGraph& graph,
                       Scalar bandwidth)
{
    Tape tape;
    Tensor soft = soften_vertices(vertices, graph);
    Var s = tape.constant(Tensor({1, student_channels.rows(), student_channels.cols()},
                                 Eigen::Map<const Vector>(student_channels.data(), student_channels.size())));
    Var raw = tape.constant(graph.raw_params());
    return repr_graph_loss(s, soft.reshaped({1, soft.dim(0), soft.dim(1), soft.dim(2)}), graph, raw, bandwidth).value()[0];
}

std::string WeightTable::to_text() const
{
    std::ostringstream os;
    os << name << '\n' << std::setw(10) << "";
    for (Index j = 0; j < weights.cols(); ++j)
        os << std::setw(10) << (j < static_cast<Index>(col_labels.size()) ? col_labels[static_cast<std::size_t>(j)] : std::to_string(j));
    os << '\n';
    for (Index i = 0; i < weights.rows(); ++i) {
        os << std::setw(10) << (i < static_cast<Index>(row_labels.size()) ? row_labels[static_cast<std::size_t>(i)] : std::to_string(i));
        for (Index j = 0; j < weights.cols(); ++j) os << std::setw(10) << std::fixed << std::setprecision(4) << weights(i, j);
        os << '\n';
    }
    return os.str();
}

std::string WeightTable::to_cell() const
{
    std::ostringstream os;
    os << std::setprecision(6);
    for (Index i = 0; i < weights.rows(); ++i) {
        if (i) os << '|';
        for (Index j = 0; j < weights.cols(); ++j) os << (j ? " " : "") << weights(i, j);
    }
    return os.str();
}

WeightTable edge_weight_report(const LogitsGraph& graph, const std::vector<std::string>& teacher_names)
{
    WeightTable t;
    t.name = "logits graph: incoming edge weights (row = receiver, column = sender)";
    t.weights = graph.incoming_weights();
    t.row_labels = teacher_names;
    t.col_labels = teacher_names;
    return t;
}

WeightTable edge_weight_report(const ReprGraph& graph, const std::vector<std::string>& vertex_names)
{
    WeightTable t;
    t.name = "representation graph: vertex weights";
    t.weights = graph.weights().transpose();
    t.row_labels = {"w"};
    t.col_labels = vertex_names;
    return t;
}

} // namespace gkd
