//! BPMN 2.0 XML import for the supported element subset.

use std::collections::BTreeMap;

use super::{Direction, Flow, GateType, ModelError, Node, NodeKind, ProcessModel};

const TASK_TAGS: &[&str] =
    &["task", "userTask", "serviceTask", "manualTask", "scriptTask", "businessRuleTask", "sendTask", "receiveTask"];

const IGNORED_TAGS: &[&str] = &[
    "documentation",
    "extensionElements",
    "laneSet",
    "incoming",
    "outgoing",
    "dataObject",
    "dataObjectReference",
    "textAnnotation",
    "association",
];

/// Converts the first `<process>` of a BPMN document. Gateway direction is
/// taken from `gatewayDirection` when present, otherwise from the flow counts.
pub fn parse_bpmn(source: &str) -> Result<ProcessModel, ModelError> {
    let doc = roxmltree::Document::parse(source).map_err(|e| ModelError::Xml(e.to_string()))?;
    let process = doc
        .descendants()
        .find(|n| n.is_element() && n.tag_name().name() == "process")
        .ok_or_else(|| ModelError::Xml("no <process> element".into()))?;

    let mut nodes = Vec::new();
    let mut flows = Vec::new();
    let mut defaults = BTreeMap::new();
    let mut gateways = Vec::new();
    let mut unsupported = Vec::new();

    for el in process.children().filter(|n| n.is_element()) {
        let tag = el.tag_name().name();
        let id = el.attribute("id").unwrap_or("").to_string();
        let name = el.attribute("name").unwrap_or("").trim().to_string();
        match tag {
            "startEvent" | "endEvent" => {
                if let Some(def) =
                    el.children().find(|c| c.is_element() && c.tag_name().name().ends_with("EventDefinition"))
                {
                    unsupported.push(format!("{tag}/{} `{id}`", def.tag_name().name()));
                    continue;
                }
                let kind = if tag == "startEvent" { NodeKind::StartEvent } else { NodeKind::EndEvent };
                nodes.push(Node { id, kind, label: name });
            }
            t if TASK_TAGS.contains(&t) => {
                let label = if name.is_empty() { id.clone() } else { name };
                nodes.push(Node { id, kind: NodeKind::Task, label });
            }
            "exclusiveGateway" | "inclusiveGateway" | "parallelGateway" => {
                let gate = match tag {
                    "exclusiveGateway" => GateType::Xor,
                    "inclusiveGateway" => GateType::Or,
                    _ => GateType::And,
                };
                if let Some(def) = el.attribute("default") {
                    defaults.insert(id.clone(), def.to_string());
                }
                let declared = match el.attribute("gatewayDirection") {
                    Some("Diverging") => Some(Direction::Split),
                    Some("Converging") => Some(Direction::Join),
                    _ => None,
                };
                gateways.push((nodes.len(), gate, declared));
                // Placeholder direction, settled once flows are known.
                nodes.push(Node { id, kind: NodeKind::Gateway { gate, direction: Direction::Split }, label: name });
            }
            "sequenceFlow" => flows.push(Flow {
                id,
                source: el.attribute("sourceRef").unwrap_or("").to_string(),
                target: el.attribute("targetRef").unwrap_or("").to_string(),
            }),
            t if IGNORED_TAGS.contains(&t) => {}
            other => unsupported.push(format!("{other} `{id}`")),
        }
    }
    if !unsupported.is_empty() {
        return Err(ModelError::Unsupported(unsupported));
    }

    for (idx, gate, declared) in gateways {
        let id = nodes[idx].id.clone();
        let outs = flows.iter().filter(|f| f.source == id).count();
        let ins = flows.iter().filter(|f| f.target == id).count();
        let direction = declared.unwrap_or(if outs > 1 || ins <= 1 { Direction::Split } else { Direction::Join });
        nodes[idx].kind = NodeKind::Gateway { gate, direction };
    }
    ProcessModel::new(nodes, flows, defaults)
}

#[cfg(test)]
mod tests {
    use super::*;

    const XOR_BPMN: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<definitions xmlns="http://www.omg.org/spec/BPMN/20100524/MODEL">
  <process id="p">
    <startEvent id="s"/>
    <userTask id="a" name="Check"/>
    <exclusiveGateway id="g" default="f3"/>
    <task id="b" name="Approve"/>
    <task id="c" name="Reject"/>
    <exclusiveGateway id="j"/>
    <endEvent id="e"/>
    <sequenceFlow id="f1" sourceRef="s" targetRef="a"/>
    <sequenceFlow id="f2" sourceRef="a" targetRef="g"/>
    <sequenceFlow id="f3" sourceRef="g" targetRef="b"/>
    <sequenceFlow id="f4" sourceRef="g" targetRef="c"/>
    <sequenceFlow id="f5" sourceRef="b" targetRef="j"/>
    <sequenceFlow id="f6" sourceRef="c" targetRef="j"/>
    <sequenceFlow id="f7" sourceRef="j" targetRef="e"/>
  </process>
</definitions>"#;

    #[test]
    fn imports_supported_subset() {
        let m = parse_bpmn(XOR_BPMN).unwrap();
        let g = m.node_index("g").unwrap();
        assert!(m.node(g).kind.is_split());
        assert_eq!(
            m.node(m.node_index("j").unwrap()).kind,
            NodeKind::Gateway { gate: GateType::Xor, direction: Direction::Join }
        );
        assert_eq!(m.default_flow_ix(g), m.flow_index("f3"));
        assert_eq!(m.task_labels().collect::<Vec<_>>(), ["Check", "Approve", "Reject"]);
        assert_eq!(super::super::parse_model(XOR_BPMN).unwrap(), m);
    }

    #[test]
    fn lists_unsupported_elements() {
        let text = XOR_BPMN
            .replace(r#"<task id="c" name="Reject"/>"#, r#"<subProcess id="c"/>"#)
            .replace(r#"<endEvent id="e"/>"#, r#"<endEvent id="e"><messageEventDefinition/></endEvent>"#);
        match parse_bpmn(&text).unwrap_err() {
            ModelError::Unsupported(items) => {
                assert!(items.iter().any(|i| i.contains("subProcess `c`")), "{items:?}");
                assert!(items.iter().any(|i| i.contains("messageEventDefinition")), "{items:?}");
            }
            other => panic!("unexpected {other}"),
        }
    }
}
