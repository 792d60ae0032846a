use std::path::Path;
use std::sync::Arc;

use anonkit_client::Client;
use anonkit_core::corpus::load_dataset;
use anonkit_core::gateway::Gateway;
use anonkit_core::model::{AttributeKind, ExposureLevel};
use anonkit_core::pipeline::{Pipeline, PipelineConfig};
use anonkit_core::runs::Runner;
use anonkit_core::simulate::Simulator;
use anonkit_core::wire::RatingRequest;
use anonkit_server::AppState;

async fn spawn(tmp: &Path) -> String {
    let ds = load_dataset(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/golden.jsonl"), None)
        .unwrap();
    let gateway = Arc::new(Gateway::new().with_provider("deepseek", Simulator::default()));
    let run = tmp.join("ours");
    Runner::new(gateway.clone(), false).cmd_anonymize(&ds, &PipelineConfig::default(), &run, "ours").await.unwrap();
    let pipeline = Pipeline::new(gateway, PipelineConfig::default(), false);
    let state = AppState::load(&[run], &tmp.join("state"), pipeline, Some(ds.samples), Some(1)).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum_serve(listener, state).await });
    format!("http://{addr}")
}

async fn axum_serve(listener: tokio::net::TcpListener, state: AppState) {
    anonkit_server::serve_on(listener, Arc::new(state)).await.unwrap();
}

#[tokio::test]
async fn round_trip_against_live_service() {
    let tmp = tempfile::tempdir().unwrap();
    let client = Client::new(&spawn(tmp.path()).await).unwrap();
    assert_eq!(client.health().await.unwrap().api_version, "1");

    let s = client.samples(None).await.unwrap();
    assert_eq!(s.samples.len(), 3);
    assert_eq!(client.samples(Some(&s.session)).await.unwrap(), s);

    let mut req = RatingRequest {
        session: s.session.clone(),
        sample_id: s.samples[0].sample_id.clone(),
        alias: "A".into(),
        ppp: Some(8),
        sif: Some(7),
        sae: Some(6),
    };
    assert!(client.rate(&req).await.unwrap().stored);
    let dup = client.rate(&req).await.unwrap_err();
    assert_eq!(dup.api_kind(), Some("duplicate_rating"));
    req.alias = "B".into();
    assert_eq!(client.rate(&req).await.unwrap_err().api_kind(), Some("unknown_alias"));

    let blind = client.aggregate(false).await.unwrap();
    assert!(blind.blinded && blind.methods.is_empty());
    let open = client.aggregate(true).await.unwrap();
    assert_eq!(open.methods["ours"].aupi, 7.0);

    let w = client.what_if("oslo", ExposureLevel::Ban).await.unwrap();
    assert!(!w.anonymized.contains("Oslo"));
    let c = client.contribution_of("oslo", AttributeKind::Location).await.unwrap();
    assert_eq!(c.tokens.len(), c.scores.len());

    let err = client.what_if("ghost", ExposureLevel::L0).await.unwrap_err();
    assert_eq!(err.api_kind(), Some("unknown_sample"));
}

#[tokio::test]
async fn unreachable_service_is_a_transport_error() {
    let client = Client::new("http://127.0.0.1:9").unwrap();
    assert!(client.health().await.unwrap_err().api_kind().is_none());
}
