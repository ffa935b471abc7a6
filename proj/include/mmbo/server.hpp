#ifndef MMBO_SERVER_HPP
#define MMBO_SERVER_HPP

#include "mmbo/session.hpp"

#include <httplib.h>

namespace mmbo {

namespace detail {

inline void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"schema_version", schema_version}, {"error", message}, {"status", status}});
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const SessionError& e) {
    send_error(res, e.status(), e.what());
  } catch (const Json::exception& e) {
    send_error(res, 400, std::string("malformed JSON: ") + e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

}  // namespace detail

/// HTTP+JSON routes over a SessionManager. CORS is open so a browser UI
/// served from elsewhere can drive the loop.
///
///   POST /sessions                    create (201)
///   POST /sessions/import             import an export document (201)
///   GET  /sessions/{id}               status, history, recommendation
///   GET  /sessions/{id}/query         pending pair (idempotent)
///   POST /sessions/{id}/preference    {"winner": "a" | "b"}
///   GET  /sessions/{id}/export        resumable document
inline void install_routes(httplib::Server& server, SessionManager& sessions) {
  using httplib::Request;
  using httplib::Response;
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/.*)", [](const Request&, Response& res) { res.status = 204; });

  server.Post("/sessions", [&](const Request& req, Response& res) {
    detail::guarded(res, [&] {
      const std::string id = sessions.create(Json::parse(req.body));
      Json body = sessions.status(id);
      detail::send_json(res, 201, body);
    });
  });
  server.Post("/sessions/import", [&](const Request& req, Response& res) {
    detail::guarded(res, [&] {
      const std::string id = sessions.import(Json::parse(req.body));
      detail::send_json(res, 201, sessions.status(id));
    });
  });
  server.Get(R"(/sessions/([A-Za-z0-9-]+))", [&](const Request& req, Response& res) {
    detail::guarded(res, [&] { detail::send_json(res, 200, sessions.status(req.matches[1])); });
  });
  server.Get(R"(/sessions/([A-Za-z0-9-]+)/query)", [&](const Request& req, Response& res) {
    detail::guarded(res, [&] { detail::send_json(res, 200, sessions.next_query(req.matches[1])); });
  });
  server.Post(R"(/sessions/([A-Za-z0-9-]+)/preference)", [&](const Request& req, Response& res) {
    detail::guarded(res, [&] {
      const Json body = Json::parse(req.body);
      if (!body.is_object() || !body.contains("winner") || !body.at("winner").is_string()) {
        throw SessionError(400, "body must be {\"winner\": \"a\" | \"b\"}");
      }
      detail::send_json(res, 200, sessions.post_preference(req.matches[1], body.at("winner").get<std::string>()));
    });
  });
  server.Get(R"(/sessions/([A-Za-z0-9-]+)/export)", [&](const Request& req, Response& res) {
    detail::guarded(res, [&] { detail::send_json(res, 200, sessions.export_json(req.matches[1])); });
  });
}

}  // namespace mmbo

#endif  // MMBO_SERVER_HPP
