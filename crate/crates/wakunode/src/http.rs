//! JSON-RPC over HTTP POST at `/`.

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::Value;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tracing::warn;
use waku_core::rpc::{error_response, parse_call, parse_request, success_response};
use waku_core::wire::Capabilities;

use crate::daemon::{submit, Cmd};

#[derive(Clone)]
struct Api {
    caps: Capabilities,
    cmd: mpsc::UnboundedSender<Cmd>,
}

async fn handle(State(api): State<Api>, body: String) -> Json<Value> {
    let req = match parse_request(&body) {
        Ok(r) => r,
        Err((id, e)) => return Json(error_response(id, &e)),
    };
    let result = match parse_call(&req.method, &req.params, &api.caps) {
        Ok(call) => submit(&api.cmd, call).await,
        Err(e) => Err(e),
    };
    Json(match result {
        Ok(v) => success_response(req.id, v),
        Err(e) => error_response(req.id, &e),
    })
}

pub(crate) async fn serve(
    listener: TcpListener,
    caps: Capabilities,
    cmd: mpsc::UnboundedSender<Cmd>,
    mut shutdown: watch::Receiver<bool>,
) {
    let app = Router::new().route("/", post(handle)).with_state(Api { caps, cmd });
    let stop = async move {
        let _ = shutdown.changed().await;
    };
    if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(stop).await {
        warn!(error = %e, "rpc server failed");
    }
}
