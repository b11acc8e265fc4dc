//! Starts the JSON API on an ephemeral port, queries it over HTTP and shuts
//! it down.

use std::sync::Arc;

use scom::data::{generate_synthetic, Generator, SyntheticSpec};
use scom::model::{train_output_model, TrainConfig};
use scom::service::{bind, router, serve, ServiceState};
use tokio::io::{AsyncReadExt, AsyncWriteExt};

async fn request(addr: std::net::SocketAddr, method: &str, path: &str, body: &str) -> std::io::Result<String> {
    let mut stream = tokio::net::TcpStream::connect(addr).await?;
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\n\
         Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(req.as_bytes()).await?;
    let mut response = String::new();
    stream.read_to_string(&mut response).await?;
    Ok(response.split("\r\n\r\n").nth(1).unwrap_or_default().to_string())
}

#[tokio::main]
async fn main() -> scom::Result<()> {
    let dataset = generate_synthetic(&SyntheticSpec::new(Generator::Duplicated, 1000, 1).with_noise(0.1))?;
    let config = TrainConfig {
        seed: 1,
        epochs: 40,
        ..TrainConfig::default()
    };
    let (model, _) = train_output_model(&dataset, &config)?;
    let state = Arc::new(ServiceState::new(model, dataset)?);

    let listener = bind("127.0.0.1:0".parse().expect("valid address")).await?;
    let addr = listener.local_addr().expect("bound address");
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, router(state, None), async {
        let _ = stopped.await;
    }));
    println!("listening on http://{addr}/api/v1");

    for (method, path, body) in [
        ("GET", "/api/v1/meta", ""),
        ("POST", "/api/v1/predict", r#"{"instance": "0", "mask": [1, 0]}"#),
        ("POST", "/api/v1/select", r#"{"k": 1, "method": "backward"}"#),
        ("POST", "/api/v1/intervene", r#"{"instance": "0", "mask": [1, 0], "groups": ["c1"]}"#),
        ("POST", "/api/v1/evaluate", r#"{"mask": [0, 1]}"#),
        ("POST", "/api/v1/select", r#"{"k": 1, "method": "forward", "excluded": ["c1", "c2"]}"#),
    ] {
        let reply = request(addr, method, path, body).await.expect("http exchange");
        let short: String = reply.chars().take(160).collect();
        println!("{method} {path}\n  {short}");
    }

    let _ = stop.send(());
    server.await.expect("server task")?;
    Ok(())
}
