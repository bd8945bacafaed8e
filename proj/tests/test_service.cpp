#include "gxestat/plot_export.hpp"
#include "gxestat/service.hpp"
#include "support/simulate.hpp"

#include <doctest.h>
#include <httplib.h>

#include <thread>

using namespace gxe;
using nlohmann::json;

namespace {

std::string trial_csv() {
  testing::SimParams p;
  p.genotypes = 5;
  p.locations = 4;
  p.years = 2;
  p.reps = 2;
  p.sd = {3, 4, 1, 0.5, 0.5, 2, 1, 0.8};
  p.seed = 314;
  return serialize_csv(testing::simulate_trial(p));
}

Request post(std::string path, std::string body, std::string type = "application/json") {
  return {"POST", std::move(path), std::move(body), std::move(type), {}};
}

Request get(std::string path) { return {"GET", std::move(path), "", "", {}}; }

std::string open_session(Service& svc) {
  auto r = svc.handle(post("/datasets", trial_csv(), "text/csv"));
  REQUIRE(r.status == 200);
  return json::parse(r.body)["session_id"].get<std::string>();
}

json body(const Response& r) { return json::parse(r.body); }

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("health and routing") {
    Service svc;
    auto h = svc.handle(get("/healthz"));
    CHECK(h.status == 200);
    CHECK(body(h)["status"] == "ok");
    CHECK(svc.handle(get("/nowhere")).status == 404);
    CHECK(svc.handle(post("/healthz", "")).status == 405);
    CHECK(svc.handle({"OPTIONS", "/datasets", "", "", {}}).status == 204);
  }

  TEST_CASE("upload: raw CSV, JSON with mapping, and parse errors") {
    Service svc;
    auto r = svc.handle(post("/datasets", trial_csv(), "text/csv"));
    REQUIRE(r.status == 200);
    const auto j = body(r);
    CHECK(j["summary"]["n_genotypes"] == 5);
    CHECK(j["summary"]["n_environments"] == 8);
    CHECK(j["summary"]["balanced"] == true);
    CHECK(j["session_id"].get<std::string>().size() == 16);

    // renamed columns through the JSON form
    std::string csv = trial_csv();
    csv.replace(csv.find("CLT"), 3, "Variety");
    json up = {{"csv", csv}, {"mapping", {{"genotype", "Variety"}}}};
    CHECK(svc.handle(post("/datasets", up.dump())).status == 200);
    up["mapping"] = {{"colour", "x"}};
    CHECK(svc.handle(post("/datasets", up.dump())).status == 400);

    auto bad = svc.handle(post("/datasets", "YR,LC,RP,CLT,MY\n2001,A,1,G1,abc\n", "text/csv"));
    CHECK(bad.status == 400);
    CHECK(body(bad)["error"] == "NonNumericTrait");
    CHECK(body(bad)["message"].get<std::string>().find("2") != std::string::npos);
    CHECK(svc.handle(post("/datasets", "{not json")).status == 400);
    CHECK(svc.session_count() == 2);
  }

  TEST_CASE("unknown session is 404") {
    Service svc;
    auto r = svc.handle(post("/sessions/0123456789abcdef/significance", R"({"case":1})"));
    CHECK(r.status == 404);
    CHECK(body(r)["error"] == "NotFound");
    CHECK(svc.handle(get("/sessions/nope/bundle")).status == 404);
  }

  TEST_CASE("analyses are idempotent and byte-identical across services") {
    Service a, b;
    const auto sa = open_session(a), sb = open_session(b);
    const std::string ammi = R"({"alpha":0.05,"n_boot":60,"seed":11})";
    for (const auto& [what, payload] :
         std::vector<std::pair<std::string, std::string>>{{"significance", R"({"case":2})"},
                                                          {"stability", ""},
                                                          {"ammi", ammi},
                                                          {"gge", R"({"mode":"which_won_where"})"}}) {
      CAPTURE(what);
      auto r1 = a.handle(post("/sessions/" + sa + "/" + what, payload));
      auto r2 = a.handle(post("/sessions/" + sa + "/" + what, payload));
      auto r3 = b.handle(post("/sessions/" + sb + "/" + what, payload));  // cold cache
      REQUIRE(r1.status == 200);
      CHECK(r1.body == r2.body);
      CHECK(r1.body == r3.body);
    }
  }

  TEST_CASE("payload shapes") {
    Service svc;
    const auto s = open_session(svc);
    auto sig = body(svc.handle(post("/sessions/" + s + "/significance", R"({"case":1})")));
    CHECK(sig["case_id"] == 1);
    CHECK(sig["rows"].back()["kind"] == "residual");
    CHECK(sig["predicted"].size() == 5 * 4 * 2 * 2);

    auto st = body(svc.handle(post("/sessions/" + s + "/stability", "{}")));
    CHECK(st["rows"].size() == 5);
    CHECK(st["grouping"] == "location");

    auto am = body(svc.handle(post("/sessions/" + s + "/ammi", R"({"n_components":2})")));
    CHECK(am["fit"]["n_components"] == 2);
    CHECK(am["selection"]["method"] == "fixed");
    CHECK(am["biplots"][0]["mode"] == "ammi");

    auto w = body(svc.handle(post("/sessions/" + s + "/gge", R"({"mode":"which_won_where"})")));
    CHECK(w["mode"] == "which_won_where");
    const auto g = biplot_from_json(w);
    if (g.warnings.empty()) {
      REQUIRE(g.winners);
      CHECK(g.winners->environments.size() == 4);
    }
    for (BiplotMode m : kGgeModes) {
      json req = {{"mode", std::string(to_string(m))}, {"centering", "environment_standardized"}};
      CHECK(svc.handle(post("/sessions/" + s + "/gge", req.dump())).status == 200);
    }

    Request rq = get("/sessions/" + s + "/bundle");
    rq.query = {{"n_boot", "40"}, {"seed", "3"}, {"case", "1"}, {"case", "2"}};
    auto bundle = svc.handle(rq);
    REQUIRE(bundle.status == 200);
    const auto back = parse_bundle(bundle.body);
    CHECK(back.significance.size() == 2);
    CHECK(back.gge->biplots.size() == 7);
    CHECK(svc.handle(rq).body == bundle.body);
  }

  TEST_CASE("model and parameter errors") {
    Service svc;
    const auto s = open_session(svc);
    auto r = svc.handle(post("/sessions/" + s + "/ammi", R"({"n_boot":20000})"));
    CHECK(r.status == 422);
    CHECK(body(r)["error"] == "InvalidArgument");
    r = svc.handle(post("/sessions/" + s + "/significance", R"({"case":9})"));
    CHECK(r.status == 422);
    r = svc.handle(post("/sessions/" + s + "/gge", R"({"mode":"ammi"})"));
    CHECK(r.status == 422);
    r = svc.handle(post("/sessions/" + s + "/gge", R"({"mode":"sideways"})"));
    CHECK(r.status == 422);
    r = svc.handle(post("/sessions/" + s + "/ammi", R"({"n_components":7})"));
    CHECK(r.status == 422);
    r = svc.handle(post("/sessions/" + s + "/stability", R"({"colour":1})"));
    CHECK(r.status == 400);
    r = svc.handle(post("/sessions/" + s + "/stability", R"([1,2])"));
    CHECK(r.status == 400);
    r = svc.handle(post("/sessions/" + s + "/ammi", R"({"alpha":"lots"})"));
    CHECK(r.status == 400);
    r = svc.handle(post("/sessions/" + s + "/ammi", R"({"alpha":1.5, "n_boot": 10})"));
    CHECK(r.status == 422);
    r = svc.handle(post("/sessions/" + s + "/nonsense", "{}"));
    CHECK(r.status == 404);
  }

  TEST_CASE("sessions expire after the TTL") {
    ServiceOptions o;
    o.session_ttl = std::chrono::seconds(60);
    Service svc(o);
    auto t = std::chrono::steady_clock::now();
    svc.set_clock([&] { return t; });
    const auto s = open_session(svc);
    t += std::chrono::seconds(59);
    CHECK(svc.handle(post("/sessions/" + s + "/stability", "")).status == 200);
    t += std::chrono::seconds(59);  // touched at 59 s, still alive
    CHECK(svc.handle(post("/sessions/" + s + "/stability", "")).status == 200);
    t += std::chrono::seconds(61);
    CHECK(svc.handle(post("/sessions/" + s + "/stability", "")).status == 404);
    CHECK(svc.session_count() == 0);
  }

  TEST_CASE("concurrent requests on one session agree") {
    Service svc;
    const auto s = open_session(svc);
    std::vector<std::string> out(6);
    std::vector<std::thread> ts;
    for (std::size_t i = 0; i < out.size(); ++i)
      ts.emplace_back([&, i] {
        out[i] = svc.handle(post("/sessions/" + s + "/ammi", R"({"n_boot":30,"seed":2})")).body;
      });
    for (auto& t : ts) t.join();
    for (const auto& b : out) CHECK(b == out[0]);
  }

  TEST_CASE("over a real socket, with CORS headers") {
    Service svc;
    HttpServer server(svc);
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread th([&] { server.listen(); });
    httplib::Client cli("127.0.0.1", port);
    cli.set_connection_timeout(5);
    // the listener may need a moment to come up
    httplib::Result h;
    for (int i = 0; i < 50 && !h; ++i) {
      h = cli.Get("/healthz");
      if (!h) std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    REQUIRE(h);
    CHECK(h->status == 200);
    CHECK(h->get_header_value("Access-Control-Allow-Origin") == "*");
    auto up = cli.Post("/datasets", trial_csv(), "text/csv");
    REQUIRE(up);
    CHECK(up->status == 200);
    const auto id = json::parse(up->body)["session_id"].get<std::string>();
    auto miss = cli.Post("/sessions/ffffffffffffffff/stability", "{}", "application/json");
    REQUIRE(miss);
    CHECK(miss->status == 404);
    auto st = cli.Post(("/sessions/" + id + "/stability").c_str(), "{}", "application/json");
    REQUIRE(st);
    CHECK(st->status == 200);
    auto b = cli.Get(("/sessions/" + id + "/bundle?n_boot=20&seed=1").c_str());
    REQUIRE(b);
    CHECK(b->status == 200);
    server.stop();
    th.join();
  }
}
