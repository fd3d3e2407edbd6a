#pragma once

#include <iostream>
#include <map>
#include <string>

#include <httplib.h>

#include "laggard/error.hpp"
#include "laggard/server.hpp"

namespace laggard {

// Serves the JSON API (and optional static assets) until the process ends.
inline void serve_http(const ApiHandlers& api, const std::string& host, int port, const std::string& assets,
                       std::ostream& log) {
  httplib::Server srv;
  auto bridge = [&api](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query.emplace(k, v);
    const auto r = api.handle(req.method, req.path, query, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  srv.Get(R"(/api/.*)", bridge);
  srv.Post(R"(/api/.*)", bridge);
  if (!assets.empty() && !srv.set_mount_point("/", assets)) throw IoError("asset directory '" + assets + "' not found");
  if (!srv.bind_to_port(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port) + " (port busy?)");
  log << "serving " << api.fit().spec.model_class() << " fit on http://" << host << ":" << port << "\n" << std::flush;
  srv.listen_after_bind();
}

}  // namespace laggard
