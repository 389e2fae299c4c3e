use super::*;
use std::collections::BTreeMap;

/// Fills in the data rate of every connection.
///
/// A producer sends its full output rate on each outgoing connection. A service
/// emits `outputRatio` times the sum of its incoming rates.
pub fn derive_rates(software: &SoftwareModel) -> Result<SoftwareModel, ModelError> {
    let mut incoming: BTreeMap<&ComponentId, Vec<&ComponentId>> = BTreeMap::new();
    for c in &software.connections {
        incoming.entry(&c.consumer).or_default().push(&c.producer);
    }
    for producers in incoming.values_mut() {
        producers.sort();
    }
    let mut memo: BTreeMap<&ComponentId, f64> = BTreeMap::new();
    let mut out = software.clone();
    for conn in &mut out.connections {
        let comp = software
            .component(conn.producer.as_str())
            .ok_or_else(|| ModelError::invalid("connection-endpoints-exist", conn.producer.to_string()))?;
        let rate = output_rate(software, comp, &incoming, &mut memo, &mut Vec::new())?;
        conn.data_rate_bytes_per_sec = Some(rate);
    }
    Ok(out)
}

fn output_rate<'a>(
    software: &'a SoftwareModel,
    comp: &'a SoftwareComponent,
    incoming: &BTreeMap<&'a ComponentId, Vec<&'a ComponentId>>,
    memo: &mut BTreeMap<&'a ComponentId, f64>,
    visiting: &mut Vec<&'a ComponentId>,
) -> Result<f64, ModelError> {
    if let Some(&r) = memo.get(&comp.id) {
        return Ok(r);
    }
    if visiting.contains(&&comp.id) {
        return Err(ModelError::CyclicSoftwareGraph(comp.id.clone()));
    }
    let rate = match comp.kind {
        ComponentKind::Source => comp
            .output_rate_bytes_per_sec
            .ok_or_else(|| ModelError::MissingRate(comp.id.clone()))?,
        ComponentKind::Sink => 0.0,
        ComponentKind::Service => {
            let ratio = comp.output_ratio.ok_or_else(|| ModelError::MissingRate(comp.id.clone()))?;
            visiting.push(&comp.id);
            let mut sum = 0.0;
            for p in incoming.get(&comp.id).map(Vec::as_slice).unwrap_or_default() {
                let producer = software
                    .component(p.as_str())
                    .ok_or_else(|| ModelError::invalid("connection-endpoints-exist", p.to_string()))?;
                sum += output_rate(software, producer, incoming, memo, visiting)?;
            }
            visiting.pop();
            ratio * sum
        }
    };
    memo.insert(&comp.id, rate);
    Ok(rate)
}
