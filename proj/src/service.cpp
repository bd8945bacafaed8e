#include "gxestat/service.hpp"

#include "gxestat/error.hpp"
#include "gxestat/pipeline.hpp"

#include <httplib.h>

#include <charconv>
#include <cstdio>
#include <mutex>
#include <random>
#include <set>

namespace gxe {

using nlohmann::json;

namespace {

struct BadRequest : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Response json_response(int status, const json& j) { return {status, dump_json(j), "application/json"}; }

Response error_response(int status, std::string_view name, const std::string& message) {
  return json_response(status, {{"error", name}, {"message", message}});
}

// Request parameters from a JSON body or a query string. Query values arrive
// as strings and are converted on access.
class Params {
 public:
  explicit Params(json obj, std::set<std::string> allowed) : obj_(std::move(obj)) {
    if (!obj_.is_object()) throw BadRequest("request body must be a JSON object");
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!allowed.count(it.key())) throw BadRequest("unknown parameter '" + it.key() + "'");
  }

  bool has(const char* key) const { return obj_.contains(key) && !obj_[key].is_null(); }

  double number(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    const auto& v = obj_[key];
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      double d = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
      if (ec == std::errc() && p == s.data() + s.size()) return d;
    }
    throw BadRequest(std::string("parameter '") + key + "' must be a number");
  }

  long long integer(const char* key, long long fallback) const {
    if (!has(key)) return fallback;
    const auto& v = obj_[key];
    if (v.is_number_integer()) return v.get<long long>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      long long n = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
      if (ec == std::errc() && p == s.data() + s.size()) return n;
    }
    throw BadRequest(std::string("parameter '") + key + "' must be an integer");
  }

  std::uint64_t seed(const char* key) const {
    if (!has(key)) return 0;
    const auto& v = obj_[key];
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      std::uint64_t n = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
      if (ec == std::errc() && p == s.data() + s.size()) return n;
    }
    throw BadRequest(std::string("parameter '") + key + "' must be a non-negative integer");
  }

  bool flag(const char* key) const {
    if (!has(key)) return false;
    const auto& v = obj_[key];
    if (v.is_boolean()) return v.get<bool>();
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw BadRequest(std::string("parameter '") + key + "' must be a boolean");
  }

  std::string text(const char* key, std::string fallback) const {
    if (!has(key)) return fallback;
    if (!obj_[key].is_string()) throw BadRequest(std::string("parameter '") + key + "' must be a string");
    return obj_[key].get<std::string>();
  }

 private:
  json obj_;
};

json parse_body(const std::string& body) {
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw BadRequest("body is not valid JSON at byte " + std::to_string(e.byte));
  }
}

json query_object(const std::multimap<std::string, std::string>& q) {
  json j = json::object();
  for (const auto& [k, v] : q) {
    if (k == "case" && j.contains(k))
      j[k] = j[k].get<std::string>() + "," + v;
    else
      j[k] = v;
  }
  return j;
}

// Normalized analysis parameters; `key()` names the cache entry.
struct AmmiParams {
  AmmiOptions options;
  EnvironmentGrouping grouping = EnvironmentGrouping::location;
  json key() const {
    return {{"n_components", options.n_components ? json(*options.n_components) : json(nullptr)},
            {"alpha", options.alpha},
            {"n_boot", options.n_boot},
            {"seed", options.seed},
            {"grouping", to_string(grouping)}};
  }
};

AmmiParams ammi_params(const Params& p, int max_boot) {
  AmmiParams a;
  if (p.has("n_components")) a.options.n_components = static_cast<int>(p.integer("n_components", 0));
  a.options.alpha = p.number("alpha", 0.05);
  const auto n_boot = p.integer("n_boot", 1000);
  if (n_boot > max_boot)
    throw Error(ErrorKind::InvalidArgument,
                "n_boot " + std::to_string(n_boot) + " exceeds the cap of " + std::to_string(max_boot));
  a.options.n_boot = static_cast<int>(n_boot);
  a.options.seed = p.seed("seed");
  a.grouping = parse_grouping(p.text("grouping", "location"));
  return a;
}

std::vector<int> parse_cases(const std::string& s) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    const auto tok = s.substr(start, end - start);
    int v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size() || tok.empty())
      throw BadRequest("case must be an integer or a comma list, got '" + s + "'");
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    auto j = path.find('/', i);
    if (j == std::string::npos) j = path.size();
    if (j > i) parts.push_back(path.substr(i, j - i));
    i = j;
  }
  return parts;
}

}  // namespace

struct Session {
  explicit Session(TrialDataset d) : ds(std::move(d)) {}
  const TrialDataset ds;
  std::mutex mutex;  // serializes the cache
  std::map<std::string, std::string> cache;
  std::chrono::steady_clock::time_point last_used;
};

struct Service::Impl {
  ServiceOptions options;
  mutable std::mutex mutex;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::mt19937_64 ids{std::random_device{}()};
  std::function<std::chrono::steady_clock::time_point()> now = [] {
    return std::chrono::steady_clock::now();
  };

  void expire() {
    const auto t = now();
    for (auto it = sessions.begin(); it != sessions.end();) {
      if (t - it->second->last_used > options.session_ttl)
        it = sessions.erase(it);
      else
        ++it;
    }
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(mutex);
    expire();
    auto it = sessions.find(id);
    if (it == sessions.end()) throw NotFound("unknown session '" + id + "'");
    it->second->last_used = now();
    return it->second;
  }

  Response create(const Request& req) {
    ColumnMapping mapping;
    std::string csv;
    auto apply = [&](const json& m) {
      if (!m.is_object()) throw BadRequest("mapping must be an object");
      for (auto it = m.begin(); it != m.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        std::optional<std::string> s;
        if (v.is_string() && !v.get<std::string>().empty()) s = v.get<std::string>();
        else if (!v.is_null() && !v.is_string()) throw BadRequest("mapping values must be strings");
        if (k == "year") mapping.year = s;
        else if (k == "rep") mapping.rep = s;
        else if (k == "location" || k == "genotype" || k == "trait") {
          if (!s) throw BadRequest("mapping '" + k + "' cannot be empty");
          (k == "location" ? mapping.location : k == "genotype" ? mapping.genotype : mapping.trait) = *s;
        } else {
          throw BadRequest("unknown mapping key '" + k + "'");
        }
      }
    };
    if (req.content_type.rfind("application/json", 0) == 0) {
      const auto j = parse_body(req.body);
      if (!j.is_object() || !j.contains("csv") || !j["csv"].is_string())
        throw BadRequest("JSON upload needs a string field 'csv'");
      for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "csv" && it.key() != "mapping")
          throw BadRequest("unknown field '" + it.key() + "'");
      csv = j["csv"].get<std::string>();
      if (j.contains("mapping")) apply(j["mapping"]);
    } else {
      csv = req.body;
      apply(query_object(req.query));
    }

    std::optional<TrialDataset> ds;
    try {
      ds.emplace(parse_csv(csv, mapping));
    } catch (const Error& e) {
      return error_response(400, e.name(), e.what());
    }
    const auto summary = summarize(*ds);
    auto session = std::make_shared<Session>(std::move(*ds));
    std::string id;
    {
      std::lock_guard lock(mutex);
      expire();
      do {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(ids()));
        id = buf;
      } while (sessions.count(id));
      session->last_used = now();
      sessions.emplace(id, session);
    }
    return json_response(200, {{"session_id", id}, {"summary", to_json(summary)}});
  }

  // Cached by (route, normalized parameters); results are pure functions of those.
  Response cached(Session& s, const std::string& route, const json& key,
                  const std::function<json()>& compute) {
    const std::string k = route + " " + key.dump();
    std::lock_guard lock(s.mutex);
    auto it = s.cache.find(k);
    if (it == s.cache.end()) it = s.cache.emplace(k, dump_json(compute())).first;
    return {200, it->second, "application/json"};
  }

  Response analysis(Session& s, const std::string& what, const Request& req) {
    if (what == "significance") {
      Params p(parse_body(req.body), {"case", "boundary_correction"});
      const int c = static_cast<int>(p.integer("case", 1));
      const bool bc = p.flag("boundary_correction");
      return cached(s, what, {{"case", c}, {"boundary_correction", bc}}, [&] {
        LrtOptions o;
        o.boundary_correction = bc;
        auto sec = significance_section(s.ds, c, o);
        json j = to_json(sec.table);
        j["predicted"] = sec.predicted;
        j["residuals"] = sec.residuals;
        return j;
      });
    }
    if (what == "stability") {
      Params p(parse_body(req.body), {"grouping"});
      StabilityOptions o;
      o.grouping = parse_grouping(p.text("grouping", "location"));
      return cached(s, what, {{"grouping", to_string(o.grouping)}},
                    [&] { return to_json(stability_report(s.ds, o)); });
    }
    if (what == "ammi") {
      Params p(parse_body(req.body), {"n_components", "alpha", "n_boot", "seed", "grouping"});
      auto a = ammi_params(p, options.max_boot);
      return cached(s, what, a.key(), [&] {
        const auto table = two_way_means(s.ds, a.grouping);
        auto o = a.options;
        o.error = cell_mean_error(table);
        auto sec = ammi_section(table, o);
        json plots = json::array();
        for (const auto& g : sec.biplots) plots.push_back(to_json(g));
        return json{{"fit", to_json(sec.fit)}, {"selection", to_json(sec.selection)},
                    {"biplots", std::move(plots)}};
      });
    }
    if (what == "gge") {
      Params p(parse_body(req.body), {"mode", "centering", "svp", "grouping"});
      const auto mode = parse_biplot_mode(p.text("mode", "pc_scatter"));
      if (mode == BiplotMode::ammi) throw Error(ErrorKind::InvalidArgument, "mode 'ammi' is not a GGE mode");
      const auto centering = parse_centering(p.text("centering", "environment_centered"));
      const double svp = p.number("svp", default_svp(mode));
      const auto grouping = parse_grouping(p.text("grouping", "location"));
      json key = {{"mode", to_string(mode)}, {"centering", to_string(centering)},
                  {"svp", svp}, {"grouping", to_string(grouping)}};
      return cached(s, what, key, [&] {
        return to_json(gge_biplot(two_way_means(s.ds, grouping), mode, centering, svp));
      });
    }
    throw NotFound("unknown analysis '" + what + "'");
  }

  Response bundle(Session& s, const Request& req) {
    Params p(query_object(req.query),
             {"case", "boundary_correction", "n_components", "alpha", "n_boot", "seed", "grouping",
              "centering", "svp"});
    PipelineOptions o;
    if (p.has("case")) o.cases = parse_cases(p.text("case", "1"));
    o.lrt.boundary_correction = p.flag("boundary_correction");
    auto a = ammi_params(p, options.max_boot);
    o.ammi = a.options;
    o.grouping = a.grouping;
    o.stability.grouping = a.grouping;
    o.centering = parse_centering(p.text("centering", "environment_centered"));
    if (p.has("svp")) o.gge_svp = p.number("svp", 0.5);
    json key = a.key();
    key["cases"] = o.cases;
    key["boundary_correction"] = o.lrt.boundary_correction;
    key["centering"] = to_string(o.centering);
    key["svp"] = o.gge_svp ? json(*o.gge_svp) : json(nullptr);
    return cached(s, "bundle", key, [&] { return to_json(run_pipeline(s.ds, o)); });
  }

  Response route(const Request& req) {
    const auto parts = split_path(req.path);
    if (req.method == "OPTIONS") return {204, "", "text/plain"};
    if (parts.size() == 1 && parts[0] == "healthz") {
      if (req.method != "GET") return error_response(405, "MethodNotAllowed", "use GET");
      return json_response(200, {{"status", "ok"}, {"schema", kSchemaVersion}});
    }
    if (parts.size() == 1 && parts[0] == "datasets") {
      if (req.method != "POST") return error_response(405, "MethodNotAllowed", "use POST");
      return create(req);
    }
    if (parts.size() == 3 && parts[0] == "sessions") {
      auto session = find(parts[1]);
      if (parts[2] == "bundle") {
        if (req.method != "GET") return error_response(405, "MethodNotAllowed", "use GET");
        return bundle(*session, req);
      }
      if (req.method != "POST") return error_response(405, "MethodNotAllowed", "use POST");
      return analysis(*session, parts[2], req);
    }
    throw NotFound("no route for " + req.path);
  }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->options = std::move(options);
}
Service::~Service() = default;

const ServiceOptions& Service::options() const { return impl_->options; }

std::size_t Service::session_count() const {
  std::lock_guard lock(impl_->mutex);
  impl_->expire();
  return impl_->sessions.size();
}

void Service::set_clock(std::function<std::chrono::steady_clock::time_point()> now) {
  std::lock_guard lock(impl_->mutex);
  impl_->now = std::move(now);
}

Response Service::handle(const Request& request) {
  try {
    return impl_->route(request);
  } catch (const NotFound& e) {
    return error_response(404, "NotFound", e.what());
  } catch (const BadRequest& e) {
    return error_response(400, "BadRequest", e.what());
  } catch (const Error& e) {
    return error_response(422, e.name(), e.what());
  } catch (const std::exception&) {
    return error_response(500, "InternalError", "internal error");
  }
}

// ---- transport -------------------------------------------------------------

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  explicit Impl(Service& s) : service(s) {}
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  const auto& opt = service.options();
  srv.set_read_timeout(opt.request_timeout);
  srv.set_write_timeout(opt.request_timeout);
  srv.set_payload_max_length(opt.max_body_bytes);
  auto* svc = &impl_->service;
  auto handler = [svc](const httplib::Request& hreq, httplib::Response& hres) {
    Request req;
    req.method = hreq.method;
    req.path = hreq.path;
    req.body = hreq.body;
    req.content_type = hreq.get_header_value("Content-Type");
    for (const auto& [k, v] : hreq.params) req.query.emplace(k, v);
    const auto r = svc->handle(req);
    hres.status = r.status;
    hres.set_header("Access-Control-Allow-Origin", svc->options().cors_origin);
    hres.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    hres.set_header("Access-Control-Allow-Headers", "Content-Type");
    if (!r.body.empty()) hres.set_content(r.body, r.content_type);
  };
  srv.Get(".*", handler);
  srv.Post(".*", handler);
  srv.Options(".*", handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    const int p = srv.bind_to_any_port(host);
    if (p <= 0) throw Error(ErrorKind::IoError, "cannot bind " + host);
    return p;
  }
  if (!srv.bind_to_port(host, port))
    throw Error(ErrorKind::IoError, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace gxe
