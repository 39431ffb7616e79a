use axum::extract::{DefaultBodyLimit, FromRequestParts, Multipart, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use viz_core::billing::{Invoice, LeaderboardEntry, Period, PayoutStatement};
use viz_core::compliance::LicenseManifest;
use viz_core::marketplace::{Account, InferenceReceipt, Role};
use viz_core::model_store::InferenceRequest;
use viz_core::money::Money;
use viz_core::registry::{AdapterListing, ListingDraft, ListingFilter, PricingTerms};

use crate::api::{
    Health, LeaderboardQuery, LicenseRequest, LicenseResponse, ListingQuery, ModelInfo,
    PayoutQuery, PeriodQuery, PriceResponse, PriceSuggestion, PublishResponse, UsageReport,
};
use crate::{ApiError, SharedState};

const MAX_BUNDLE_BYTES: usize = 64 * 1024 * 1024;
const DEFAULT_LEADERBOARD_SIZE: usize = 10;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/models", get(models))
        .route("/v1/adapters", post(publish).get(search))
        .route("/v1/adapters/{id}", axum::routing::delete(delist))
        .route("/v1/adapters/{id}/price", put(update_price))
        .route("/v1/adapters/{id}/price-suggestion", get(price_suggestion))
        .route("/v1/licenses", post(license))
        .route("/v1/infer", post(infer))
        .route("/v1/usage", get(usage))
        .route("/v1/invoices/{period}", get(invoice))
        .route("/v1/payouts/{period}", get(payouts))
        .route("/v1/leaderboard", get(leaderboard))
        .layer(DefaultBodyLimit::max(MAX_BUNDLE_BYTES))
        .with_state(state)
}

/// The account behind the request's bearer token.
pub struct Caller(pub Account);

impl FromRequestParts<SharedState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &SharedState) -> Result<Self, ApiError> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(ApiError::unauthorized)?;
        let market = state.read()?;
        market
            .authenticate(token.trim())
            .cloned()
            .map(Caller)
            .ok_or_else(ApiError::unauthorized)
    }
}

fn period_or_now(p: Option<Period>, state: &SharedState) -> Period {
    p.unwrap_or_else(|| Period::containing(state.now()))
}

async fn healthz(State(state): State<SharedState>) -> Result<Json<Health>, ApiError> {
    let m = state.read()?;
    Ok(Json(Health {
        status: "ok".into(),
        events: m.event_log().len(),
        log_head: m.event_log().head().to_hex(),
        listings: m.registry().listings().count(),
    }))
}

async fn models(State(state): State<SharedState>, _: Caller) -> Result<Json<Vec<ModelInfo>>, ApiError> {
    let m = state.read()?;
    Ok(Json(
        m.models()
            .map(|b| ModelInfo {
                model_id: b.model_id.clone(),
                layer_dims: b.layer_dims.clone(),
            })
            .collect(),
    ))
}

async fn publish(
    State(state): State<SharedState>,
    Caller(caller): Caller,
    mut form: Multipart,
) -> Result<(StatusCode, Json<PublishResponse>), ApiError> {
    let (mut bundle, mut manifest, mut draft) = (None, None, None);
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        match name.as_str() {
            "bundle" => bundle = Some(bytes),
            "manifest" => {
                manifest = Some(
                    serde_json::from_slice::<LicenseManifest>(&bytes)
                        .map_err(|e| ApiError::bad_request(format!("manifest: {e}")))?,
                )
            }
            "listing" => {
                draft = Some(
                    serde_json::from_slice::<ListingDraft>(&bytes)
                        .map_err(|e| ApiError::bad_request(format!("listing: {e}")))?,
                )
            }
            other => return Err(ApiError::bad_request(format!("unexpected field {other:?}"))),
        }
    }
    let missing = |f: &str| ApiError::bad_request(format!("multipart field {f:?} is required"));
    let bundle = bundle.ok_or_else(|| missing("bundle"))?;
    let manifest = manifest.ok_or_else(|| missing("manifest"))?;
    let draft = draft.ok_or_else(|| missing("listing"))?;
    let now = state.now();
    let listing = state
        .write()?
        .publish(&caller.account_id, &bundle, &draft, &manifest, now)?;
    Ok((
        StatusCode::CREATED,
        Json(PublishResponse {
            listing_id: listing.listing_id.clone(),
            listing,
        }),
    ))
}

async fn search(
    State(state): State<SharedState>,
    _: Caller,
    Query(q): Query<ListingQuery>,
) -> Result<Json<Vec<AdapterListing>>, ApiError> {
    let filter = ListingFilter {
        domain: q.domain,
        language: q.language,
        min_perf: q.min_perf,
        mode: q.mode,
    };
    let m = state.read()?;
    Ok(Json(m.search(&filter).into_iter().cloned().collect()))
}

async fn update_price(
    State(state): State<SharedState>,
    Caller(caller): Caller,
    Path(id): Path<String>,
    Json(terms): Json<PricingTerms>,
) -> Result<Json<PriceResponse>, ApiError> {
    let now = state.now();
    let listing = state.write()?.update_price(&caller.account_id, &id, terms, now)?;
    Ok(Json(PriceResponse {
        listing_id: listing.listing_id,
        terms: listing.terms,
    }))
}

async fn delist(
    State(state): State<SharedState>,
    Caller(caller): Caller,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    let now = state.now();
    state.write()?.delist(&caller.account_id, &id, now)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn price_suggestion(
    State(state): State<SharedState>,
    _: Caller,
    Path(id): Path<String>,
) -> Result<Json<PriceSuggestion>, ApiError> {
    let m = state.read()?;
    let suggested: Money = m.suggest_price(&id)?;
    let current = m.registry().listing(&id).map(|l| l.terms.per_1k_units).unwrap_or_default();
    Ok(Json(PriceSuggestion {
        listing_id: id,
        current_per_1k_units: current,
        suggested_per_1k_units: suggested,
    }))
}

async fn license(
    State(state): State<SharedState>,
    Caller(caller): Caller,
    Json(req): Json<LicenseRequest>,
) -> Result<(StatusCode, Json<LicenseResponse>), ApiError> {
    let now = state.now();
    let license = state
        .write()?
        .grant_license(&caller.account_id, &req.listing_id, req.kind, req.months, now)?;
    Ok((
        StatusCode::CREATED,
        Json(LicenseResponse {
            license_key: license.license_key.clone(),
            license,
        }),
    ))
}

async fn infer(
    State(state): State<SharedState>,
    Caller(caller): Caller,
    Json(req): Json<InferenceRequest>,
) -> Result<Json<InferenceReceipt>, ApiError> {
    let now = state.now();
    let prepared = state.read()?.prepare_infer(&caller.account_id, &req, now)?;
    let receipt = state.write()?.commit_infer(prepared, now)?;
    Ok(Json(receipt))
}

async fn usage(
    State(state): State<SharedState>,
    Caller(caller): Caller,
    Query(q): Query<PeriodQuery>,
) -> Result<Json<UsageReport>, ApiError> {
    let period = period_or_now(q.period, &state);
    let m = state.read()?;
    let events: Vec<_> = m.usage(&caller.account_id, period).into_iter().cloned().collect();
    Ok(Json(UsageReport {
        account_id: caller.account_id,
        period,
        total_units: events.iter().map(|e| e.units).sum(),
        total_charges: events.iter().map(|e| e.total()).sum(),
        events,
    }))
}

/// Closes the period on first request; later requests return the same
/// invoice.
async fn invoice(
    State(state): State<SharedState>,
    Caller(caller): Caller,
    Path(period): Path<Period>,
) -> Result<Json<Invoice>, ApiError> {
    let now = state.now();
    if state.read()?.ledger().is_closed(period) {
        return Ok(Json(state.read()?.ledger().invoice(&caller.account_id, period)));
    }
    Ok(Json(state.write()?.close_period(&caller.account_id, period, now)?))
}

async fn payouts(
    State(state): State<SharedState>,
    Caller(caller): Caller,
    Path(period): Path<Period>,
    Query(q): Query<PayoutQuery>,
) -> Result<Json<PayoutStatement>, ApiError> {
    let provider = match (caller.role, q.provider_id) {
        (Role::Admin, Some(p)) => p,
        (Role::Provider, None) => caller.account_id,
        (Role::Provider, Some(p)) if p == caller.account_id => p,
        _ => {
            return Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "forbidden",
                "payout statements are visible to their provider and to admins",
            ))
        }
    };
    Ok(Json(state.read()?.payout_statement(&provider, period)?))
}

async fn leaderboard(
    State(state): State<SharedState>,
    _: Caller,
    Query(q): Query<LeaderboardQuery>,
) -> Result<Json<Vec<LeaderboardEntry>>, ApiError> {
    let period = period_or_now(q.period, &state);
    let n = q.n.unwrap_or(DEFAULT_LEADERBOARD_SIZE);
    Ok(Json(state.read()?.leaderboard(period, n)))
}
