#pragma once

#include <functional>
#include <map>
#include <string>

namespace tilepress {

// Transport-neutral request/response pair. The same handlers serve real HTTP
// (cpp-httplib) and in-process dispatch through the autoscaler.
struct HttpRequest {
  std::string method = "POST";
  std::string path = "/";
  std::map<std::string, std::string> headers;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

using RequestHandler = std::function<HttpResponse(const HttpRequest&)>;
using ResponseCallback = std::function<void(HttpResponse)>;
using AsyncRequestHandler = std::function<void(HttpRequest, ResponseCallback)>;

inline bool is_success(int status) { return status >= 200 && status < 300; }

// {"error":"<code>","detail":"<text>"}
std::string error_body(const std::string& code, const std::string& detail);
HttpResponse error_response(int status, const std::string& code, const std::string& detail);

}  // namespace tilepress
